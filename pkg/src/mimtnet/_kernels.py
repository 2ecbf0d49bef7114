"""Batched bag-score kernels.

The forward pass over every (patient, proposal) pair dominates training time.
Two interchangeable implementations are provided:

* a numba ``@njit`` kernel that streams proposals per patient and keeps only
  the running per-task maximum, never materialising the R x H activations;
* a pure-numpy path that processes patients in chunks with batched matmuls.

``MIMTNET_BACKEND=numpy`` forces the numpy path; otherwise numba is used when
it imports. Both return identical argmax indices (ties go to the smallest
proposal index) and agree on scores to rounding.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

_requested = os.environ.get("MIMTNET_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"MIMTNET_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
USE_NUMBA = numba is not None and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"

# cap on chunk * R * H doubles held by the numpy path
_NUMPY_CHUNK_ELEMS = 4_000_000


def bag_scores_numpy(X, idx, conv_w, conv_b, w1, b1, w2, b2):
    m = X.shape[0]
    R, _, S = conv_w.shape
    H, n = w1.shape[0], w2.shape[0]
    best = np.empty((m, n))
    arg = np.empty((m, n), dtype=np.int64)
    if m == 0:
        return best, arg
    padded = np.concatenate([X, np.zeros((m, 1))], axis=1)
    step = max(1, _NUMPY_CHUNK_ELEMS // (R * max(H, S, n)))
    for lo in range(0, m, step):
        inst = padded[lo:lo + step][:, idx]
        conv = np.maximum(np.einsum("irs,rfs->irf", inst, conv_w) + conv_b, 0.0)
        hid = np.maximum(conv @ w1.T + b1, 0.0)
        scores = hid @ w2.T + b2
        a = np.argmax(scores, axis=1)
        arg[lo:lo + step] = a
        best[lo:lo + step] = np.take_along_axis(scores, a[:, None, :], axis=1)[:, 0, :]
    return best, arg


if numba is not None:

    @numba.njit(cache=True)
    def _bag_scores_numba(X, idx, conv_w, conv_b, w1, b1, w2, b2):  # pragma: no cover
        m = X.shape[0]
        R, F, S = conv_w.shape
        H = w1.shape[0]
        n = w2.shape[0]
        best = np.empty((m, n))
        arg = np.zeros((m, n), dtype=np.int64)
        for i in range(m):
            c = np.empty(F)
            h = np.empty(H)
            for r in range(R):
                for f in range(F):
                    acc = conv_b[r, f]
                    for s in range(S):
                        j = idx[r, s]
                        if j < 0:
                            break
                        v = X[i, j]
                        if v != 0.0:
                            acc += conv_w[r, f, s] * v
                    c[f] = acc if acc > 0.0 else 0.0
                for k in range(H):
                    acc = b1[k]
                    for f in range(F):
                        acc += w1[k, f] * c[f]
                    h[k] = acc if acc > 0.0 else 0.0
                for t in range(n):
                    acc = b2[t]
                    for k in range(H):
                        acc += w2[t, k] * h[k]
                    if r == 0 or acc > best[i, t]:
                        best[i, t] = acc
                        arg[i, t] = r
        return best, arg


def bag_scores(X, idx, conv_w, conv_b, w1, b1, w2, b2, backend=None):
    """Per-task max instance score and its proposal index for every row of X.

    ``conv_w`` is (R, F, S) and ``conv_b`` (R, F); shared kernels are passed
    broadcast to that shape.
    """
    backend = backend or BACKEND
    args = (
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(conv_w, dtype=np.float64),
        np.ascontiguousarray(conv_b, dtype=np.float64),
        np.ascontiguousarray(w1), np.ascontiguousarray(b1),
        np.ascontiguousarray(w2), np.ascontiguousarray(b2),
    )
    if backend == "numba":
        if numba is None:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _bag_scores_numba(*args)
    return bag_scores_numpy(*args)
