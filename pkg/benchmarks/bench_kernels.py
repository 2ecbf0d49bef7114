"""Time the numba and numpy bag-score kernels on a training-sized batch.

    python3 benchmarks/bench_kernels.py [--patients 480] [--features 60] [--repeat 5]

Prints best-of-N wall times for the forward kernel and for one full-batch
gradient step, plus the largest score difference between the two backends.
"""

import argparse
import time

import numpy as np

from mimtnet import _kernels
from mimtnet.network import batch_forward
from mimtnet.sampler import generate_proposals
from mimtnet.training import TrainConfig, init_model_params, loss_and_grad


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patients", type=int, default=480)
    ap.add_argument("--features", type=int, default=60)
    ap.add_argument("--tasks", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = TrainConfig(seed=args.seed)
    rng = np.random.default_rng(args.seed)
    X = (rng.random((args.patients, args.features)) < 0.1).astype(np.float64)
    Y = (rng.random((args.patients, args.tasks)) < 0.3).astype(np.float64)
    ps = generate_proposals(args.features, cfg.proposals, cfg.max_size, cfg.seed)
    params = init_model_params(cfg, ps, args.tasks)

    backends = ["numpy"]
    if _kernels.numba is not None:
        backends.insert(0, "numba")
        batch_forward(params, X[:2], ps, backend="numba")  # compile outside the timing

    print(f"patients={args.patients} features={args.features} R={cfg.proposals} "
          f"S={cfg.max_size} F={cfg.filters} H={cfg.hidden} n={args.tasks} "
          f"(default backend: {_kernels.BACKEND})")
    results = {}
    for b in backends:
        fwd = best_time(lambda: batch_forward(params, X, ps, backend=b), args.repeat)
        step = best_time(lambda: loss_and_grad(params, X, ps, Y, backend=b), args.repeat)
        results[b] = batch_forward(params, X, ps, backend=b)
        print(f"{b:>6}: forward {fwd * 1e3:8.1f} ms   gradient step {step * 1e3:8.1f} ms")

    if len(results) == 2:
        (s1, a1), (s2, a2) = results["numba"], results["numpy"]
        print(f"max |score diff| {np.abs(s1 - s2).max():.2e}; "
              f"argmax agreement {np.mean(a1 == a2):.4f}")


if __name__ == "__main__":
    main()
