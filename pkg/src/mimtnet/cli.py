"""Command line entry point: ``mimtnet <command> ...``.

Exit codes: 0 success, 2 parameter error, 3 data/format error, 4 training error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .baselines import MODEL_KINDS, MlpConfig, mlknn_fit, mlknn_predict, mlp_predict, mlp_train
from .baselines import MlknnModel, MlpModel
from .dataio import SyntheticSpec, generate_synthetic, load_csv, save_csv
from .errors import DataFormatError, MimtnetError, ParameterError
from .metrics import EvalInput, evaluate
from .modelio import load_model, save_model
from .training import Model, TrainConfig, predict, train


def _add_model_flags(p, with_model=True):
    if with_model:
        p.add_argument("--model", choices=MODEL_KINDS, default="mimtcnn")
    p.add_argument("--proposals", type=int, default=500)
    p.add_argument("--max-size", type=int, default=10)
    p.add_argument("--filters", type=int, default=TrainConfig.filters)
    p.add_argument("--hidden", type=int, default=None,
                   help="hidden units (default 64 for mimtcnn, 128 for mlp)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--k", type=int, default=20, help="ML-KNN neighbour count")
    p.add_argument("--conv-mode", choices=("local", "shared"), default="local")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mimtnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a planted-signal synthetic dataset")
    g.add_argument("--out", required=True)
    defaults = SyntheticSpec()
    g.add_argument("--patients", type=int, default=defaults.patients)
    g.add_argument("--features", type=int, default=defaults.features)
    g.add_argument("--tasks", type=int, default=defaults.tasks)
    g.add_argument("--keys-per-task", type=int, default=defaults.keys_per_task)
    g.add_argument("--background-rate", type=float, default=defaults.background_rate)
    g.add_argument("--label-flip-rate", type=float, default=defaults.label_flip_rate)
    g.add_argument("--min-task-frequency", type=int, default=defaults.min_task_frequency)
    g.add_argument("--max-symptoms", type=int, default=defaults.max_symptoms)
    g.add_argument("--max-active-tasks", type=int, default=defaults.max_active_tasks)
    g.add_argument("--seed", type=int, default=defaults.seed)

    t = sub.add_parser("train", help="fit a model and save it")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    _add_model_flags(t)

    p = sub.add_parser("predict", help="score a dataset with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    c = sub.add_parser("cv", help="k-fold cross-validation report")
    c.add_argument("--data", required=True)
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--report", required=True)
    c.add_argument("--keys", help="ground-truth key JSON from gen-data (adds key_hit_rate)")
    _add_model_flags(c)

    s = sub.add_parser("sweep", help="MAP across proposal max sizes or generation times")
    s.add_argument("--data", required=True)
    s.add_argument("--param", choices=("max-size", "proposals"), required=True)
    s.add_argument("--values", required=True)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--report", required=True)
    _add_model_flags(s, with_model=False)

    r = sub.add_parser("robustness", help="MIMT-CNN vs ML-KNN under subsampling or noise")
    r.add_argument("--data", required=True)
    r.add_argument("--mode", choices=("subsample", "noise"), required=True)
    r.add_argument("--values", required=True)
    r.add_argument("--folds", type=int, default=5)
    r.add_argument("--report", required=True)
    _add_model_flags(r, with_model=False)
    return parser


def _parse_values(text, kind):
    try:
        vals = [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad --values list {text!r}: {exc}") from exc
    if not vals:
        raise ParameterError("--values is empty")
    return vals


def _cnn_config(args):
    return TrainConfig(epochs=args.epochs, learning_rate=args.lr, proposals=args.proposals,
                       max_size=args.max_size, filters=args.filters,
                       hidden=args.hidden if args.hidden is not None else 64,
                       seed=args.seed, conv_mode=args.conv_mode)


def _model_config(kind, args):
    if kind == "mimtcnn":
        return _cnn_config(args)
    if kind == "mlknn":
        return harness.MlknnConfig(k=args.k)
    return MlpConfig(hidden=args.hidden if args.hidden is not None else 128,
                     epochs=args.epochs, learning_rate=args.lr, seed=args.seed)


def _load_data(path):
    try:
        return load_csv(path)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def cmd_gen_data(args):
    spec = SyntheticSpec(
        patients=args.patients, features=args.features, tasks=args.tasks,
        keys_per_task=args.keys_per_task, max_active_tasks=args.max_active_tasks,
        max_symptoms=args.max_symptoms, background_rate=args.background_rate,
        label_flip_rate=args.label_flip_rate, min_task_frequency=args.min_task_frequency,
        seed=args.seed,
    )
    ds, keys = generate_synthetic(spec)
    save_csv(ds, args.out)
    doc = {"label_names": ds.label_names, "keys": [k.tolist() for k in keys]}
    harness.sibling_csv(args.out, ".keys.json").write_text(
        json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args):
    ds = _load_data(args.data)
    cfg = _model_config(args.model, args)
    if args.model == "mimtcnn":
        model = train(ds, cfg)
    elif args.model == "mlknn":
        model = mlknn_fit(ds, k=cfg.k, s=cfg.s)
    else:
        model = mlp_train(ds, cfg)
    save_model(model, args.out)


def cmd_predict(args):
    model = load_model(args.model)
    ds = _load_data(args.data)
    if ds.feature_names != model.feature_names:
        raise DataFormatError("dataset feature columns do not match the model")
    if isinstance(model, Model):
        probs, hard = predict(model, ds.features)
        kind = "mimtcnn"
    elif isinstance(model, MlpModel):
        probs, hard = mlp_predict(model, ds.features)
        kind = "mlp"
    else:
        assert isinstance(model, MlknnModel)
        probs = mlknn_predict(model, ds.features)
        hard = (probs > 0.5).astype(np.uint8)
        kind = "mlknn"

    doc = {"format": harness.REPORT_FORMAT, "experiment": "predict", "model": kind,
           "samples": ds.n_samples, "label_names": ds.label_names}
    if ds.n_samples and list(ds.label_names) == list(model.label_names):
        doc["metrics"] = evaluate(EvalInput(probs, hard, ds.labels))
    Path(args.out).write_text(json.dumps(harness._jsonable(doc), indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + [f"p_{n}" for n in ds.label_names] + [f"h_{n}" for n in ds.label_names])
    for i in range(ds.n_samples):
        w.writerow([i] + [format(float(v), ".17g") for v in probs[i]] + [int(v) for v in hard[i]])
    harness.sibling_csv(args.out).write_text(buf.getvalue(), encoding="utf-8")


def cmd_cv(args):
    ds = _load_data(args.data)
    keys = None
    if args.keys:
        keys = json.loads(Path(args.keys).read_text(encoding="utf-8"))["keys"]
    report = harness.run_cv(ds, args.model, _model_config(args.model, args), args.seed,
                            args.folds, keys=keys)
    report.write(args.report)


def cmd_sweep(args):
    ds = _load_data(args.data)
    values = _parse_values(args.values, int)
    cfg = _cnn_config(args)
    if args.param == "max-size":
        report = harness.sweep_max_size(ds, values, args.proposals, args.seed, cfg, args.folds)
    else:
        report = harness.sweep_generation_times(ds, values, args.max_size, args.seed, cfg,
                                                args.folds)
    report.write(args.report)


def cmd_robustness(args):
    ds = _load_data(args.data)
    cnn, knn = _cnn_config(args), harness.MlknnConfig(k=args.k)
    if args.mode == "subsample":
        report = harness.subsample_experiment(ds, _parse_values(args.values, float), args.seed,
                                              cnn, knn, args.folds)
    else:
        report = harness.noise_experiment(ds, _parse_values(args.values, int), args.seed,
                                          cnn, knn, args.folds)
    report.write(args.report)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "sweep": cmd_sweep,
    "robustness": cmd_robustness,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except MimtnetError as exc:
        print(f"mimtnet {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"mimtnet {args.command}: {exc}", file=sys.stderr)
        return DataFormatError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
