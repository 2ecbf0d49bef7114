"""Cross-validation experiments and report emission.

Every experiment reuses a single k-fold split per root seed so sweep points
and models are compared on identical test folds. Per-fold randomness (model
initialisation, proposals, training subsamples, noise columns) comes from
seeds derived by hashing the root seed with a purpose tag, so a report is a
pure function of its configuration echo.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    MODEL_KINDS,
    MlpConfig,
    mlknn_fit,
    mlknn_predict,
    mlp_predict,
    mlp_train,
)
from .dataio import Dataset
from .errors import MimtnetError, ParameterError
from .metrics import COVERAGE_NOTE, EvalInput, evaluate
from .training import TrainConfig, predict_with_keys, train

REPORT_FORMAT = "mimtnet-report-v1"
SCALAR_METRICS = ("map", "coverage", "subset_accuracy", "hamming_loss")


@dataclass(frozen=True)
class MlknnConfig:
    k: int = 20
    s: float = 1.0

    def to_dict(self):
        return {"k": self.k, "s": self.s}


def default_config(kind):
    if kind == "mimtcnn":
        return TrainConfig()
    if kind == "mlknn":
        return MlknnConfig()
    if kind == "mlp":
        return MlpConfig()
    raise ParameterError(f"model must be one of {MODEL_KINDS}, got {kind!r}")


def derive_seed(root: int, *parts) -> int:
    """64-bit seed from the root seed and a tuple of tags (name, fold, value...)."""
    digest = hashlib.blake2b(repr((int(root),) + parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(",".join(ds.feature_names).encode() + b"|" + ",".join(ds.label_names).encode())
    h.update(np.ascontiguousarray(ds.features).tobytes())
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple
    seed: int

    def train_indices(self, fold: int) -> np.ndarray:
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))

    def test_indices(self, fold: int) -> np.ndarray:
        return np.sort(self.folds[fold])


def kfold_split(p: int, k: int = 5, seed: int = 0) -> FoldSplit:
    if k < 2:
        raise ParameterError("need at least 2 folds")
    if p < k:
        raise ParameterError(f"cannot split {p} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(p)
    return FoldSplit(tuple(np.array_split(perm, k)), seed)


def add_noise_features(ds: Dataset, count: int, seed: int) -> Dataset:
    """Append ``count`` fair-coin binary columns after the existing features."""
    if count < 0:
        raise ParameterError("noise count must be non-negative")
    if count == 0:
        return ds
    rng = np.random.default_rng(seed)
    noise = (rng.random((ds.n_samples, count)) < 0.5).astype(np.uint8)
    names = [f"noise_{j:03d}" for j in range(count)]
    return Dataset(np.hstack([ds.features, noise]), ds.labels,
                   ds.feature_names + names, ds.label_names)


# ------------------------------------------------------------------ reports


@dataclass
class Report:
    experiment: str
    config: dict
    points: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def to_document(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "experiment": self.experiment,
            "metric_notes": {"coverage": COVERAGE_NOTE,
                             "precision_recall": "null marks an undefined 0/0 ratio"},
            "config": self.config,
            "points": self.points,
        }

    def dumps(self) -> str:
        return json.dumps(_jsonable(self.to_document()), indent=1, sort_keys=True) + "\n"

    def csv_text(self) -> str:
        cols = ["experiment", "model", "param", "value", "fold", "n_train", "n_test",
                *SCALAR_METRICS, "map_excluded_tasks", "coverage_skipped_samples",
                "undefined_precision", "undefined_recall", "key_hit_rate"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for pt in self.points:
            for fr in pt["folds"]:
                row = {"experiment": self.experiment, "model": pt["model"],
                       "param": pt["param"], "value": pt["value"], **fr}
                w.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in cols])
        return buf.getvalue()

    def timing_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "param", "value", "fold", "seconds"])
        for t in self.timings:
            w.writerow([t["model"], t["param"], t["value"], t["fold"], f"{t['seconds']:.3f}"])
        return buf.getvalue()

    def write(self, path) -> None:
        """Write the JSON report plus sibling ``.csv`` (per fold) and ``.timing.csv``.

        The first two are deterministic; wall-clock times live only in the
        timing file.
        """
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        sibling_csv(path).write_text(self.csv_text(), encoding="utf-8")
        sibling_csv(path, ".timing.csv").write_text(self.timing_csv_text(), encoding="utf-8")

    def mean_metric(self, metric="map", model=None, value=None):
        for pt in self.points:
            if (model is None or pt["model"] == model) and (value is None or pt["value"] == value):
                return pt["mean"][metric]
        raise KeyError((metric, model, value))

    def series(self, metric="map", model=None) -> dict:
        return {pt["value"]: pt["mean"][metric] for pt in self.points
                if model is None or pt["model"] == model}


def sibling_csv(path, suffix=".csv") -> Path:
    path = Path(path)
    stem = path.name[:-len(path.suffix)] if path.suffix else path.name
    return path.with_name(stem + suffix)


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# -------------------------------------------------------------- evaluation


def _config_dict(config):
    return config.to_dict() if hasattr(config, "to_dict") else dict(config)


def fit_predict(kind, config, train_ds: Dataset, test_X, *, backend=None):
    """Train ``kind`` and return (probs, hard, argmax proposals or None)."""
    if kind == "mimtcnn":
        model = train(train_ds, config, backend=backend)
        return predict_with_keys(model, test_X, backend=backend)
    if kind == "mlknn":
        model = mlknn_fit(train_ds, k=config.k, s=config.s)
        probs = mlknn_predict(model, test_X)
        return probs, (probs > 0.5).astype(np.uint8), None
    if kind == "mlp":
        model = mlp_train(train_ds, config)
        probs, hard = mlp_predict(model, test_X)
        return probs, hard, None
    raise ParameterError(f"model must be one of {MODEL_KINDS}, got {kind!r}")


def key_hit_rate(argmax, hard, truth, proposals, keys):
    """Share of true-positive predictions whose winning proposal holds a key feature."""
    key_sets = [set(int(j) for j in k) for k in keys]
    hits = total = 0
    for i, t in zip(*np.nonzero((hard == 1) & (truth == 1))):
        total += 1
        hits += bool(key_sets[t].intersection(proposals[argmax[i, t]]))
    return hits / total if total else None


def _with_seed(config, seed):
    return config.replace(seed=seed) if hasattr(config, "replace") and hasattr(config, "seed") else config


def _mean_point(fold_results):
    mean = {}
    for m in SCALAR_METRICS:
        vals = [fr[m] for fr in fold_results if fr[m] is not None]
        mean[m] = float(np.mean(vals)) if vals else None
    for m in ("precision", "recall"):
        table = np.array([[np.nan if v is None else v for v in fr[m]] for fr in fold_results])
        with np.errstate(invalid="ignore"):
            col = [None if np.isnan(table[:, t]).all() else float(np.nanmean(table[:, t]))
                   for t in range(table.shape[1])]
        mean[m] = col
    for m in ("map_excluded_tasks", "coverage_skipped_samples",
              "undefined_precision", "undefined_recall"):
        mean[m] = int(sum(fr[m] for fr in fold_results))
    rates = [fr["key_hit_rate"] for fr in fold_results if fr.get("key_hit_rate") is not None]
    mean["key_hit_rate"] = float(np.mean(rates)) if rates else None
    return mean


def _cv_point(dataset, kind, config, root_seed, split, *, param=None, value=None,
              train_fraction=1.0, keys=None, backend=None, timings=None):
    fold_results = []
    for fold in range(len(split.folds)):
        train_idx = split.train_indices(fold)
        test_idx = split.test_indices(fold)
        if train_fraction < 1.0:
            rng = np.random.default_rng(derive_seed(root_seed, "subsample", fold, train_fraction))
            size = max(1, int(round(train_fraction * len(train_idx))))
            train_idx = np.sort(rng.choice(train_idx, size=size, replace=False))
        fold_cfg = _with_seed(config, derive_seed(root_seed, "model", fold))
        t0 = time.perf_counter()
        try:
            probs, hard, argmax = fit_predict(kind, fold_cfg, dataset.subset(train_idx),
                                              dataset.features[test_idx], backend=backend)
        except MimtnetError as exc:
            raise type(exc)(f"fold {fold}: {exc}") from exc
        truth = dataset.labels[test_idx]
        fr = {"fold": fold, "n_train": len(train_idx), "n_test": len(test_idx),
              "train_indices": train_idx.tolist(), "test_indices": test_idx.tolist(),
              "model_seed": fold_cfg.seed if hasattr(fold_cfg, "seed") else None,
              **evaluate(EvalInput(probs, hard, truth))}
        fr["key_hit_rate"] = None
        if keys is not None and argmax is not None:
            proposals = train_proposals(dataset, fold_cfg)
            fr["key_hit_rate"] = key_hit_rate(argmax, hard, truth, proposals, keys)
        fold_results.append(fr)
        if timings is not None:
            timings.append({"model": kind, "param": param, "value": value, "fold": fold,
                            "seconds": time.perf_counter() - t0})
    return {"model": kind, "param": param, "value": value,
            "config": _config_dict(config), "folds": fold_results,
            "mean": _mean_point(fold_results)}


def train_proposals(dataset, config):
    """Proposals a MIMT-CNN trained with ``config`` on ``dataset`` uses."""
    from .sampler import generate_proposals

    return generate_proposals(dataset.n_features, config.proposals, config.max_size,
                              config.seed).proposals


def _echo(experiment, dataset, seed, folds, **extra):
    return {"experiment": experiment, "seed": seed, "folds": folds,
            "dataset": {"fingerprint": dataset_fingerprint(dataset),
                        "samples": dataset.n_samples, "features": dataset.n_features,
                        "tasks": dataset.n_tasks},
            **extra}


def run_cv(dataset: Dataset, model_kind="mimtcnn", config=None, seed=0, folds=5, *,
           keys=None, backend=None) -> Report:
    config = config if config is not None else default_config(model_kind)
    split = kfold_split(dataset.n_samples, folds, derive_seed(seed, "split"))
    report = Report("cv", _echo("cv", dataset, seed, folds, model=model_kind,
                                model_config=_config_dict(config),
                                keys=None if keys is None else [list(map(int, k)) for k in keys]))
    report.points.append(_cv_point(dataset, model_kind, config, seed, split, keys=keys,
                                   backend=backend, timings=report.timings))
    return report


def _sweep(name, param, dataset, values, config, seed, folds, backend, make_config, fixed):
    config = config if config is not None else TrainConfig()
    split = kfold_split(dataset.n_samples, folds, derive_seed(seed, "split"))
    report = Report(name, _echo(name, dataset, seed, folds, model="mimtcnn",
                                model_config=_config_dict(config), param=param,
                                values=list(values), fixed=fixed))
    for v in values:
        cfg = make_config(config, v)
        report.points.append(_cv_point(dataset, "mimtcnn", cfg, seed, split, param=param,
                                       value=v, backend=backend, timings=report.timings))
    return report


def sweep_max_size(dataset, sizes=(5, 10, 15, 20, 25), R=500, seed=0, config=None,
                   folds=5, backend=None) -> Report:
    for s in sizes:
        if not 1 <= s <= dataset.n_features:
            raise ParameterError(f"max size {s} outside 1..{dataset.n_features}")
    return _sweep("sweep_max_size", "max_size", dataset, sizes, config, seed, folds, backend,
                  lambda c, v: c.replace(max_size=int(v), proposals=int(R)),
                  {"proposals": int(R)})


def sweep_generation_times(dataset, times=(100, 500, 1000, 1500, 2000), S=10, seed=0,
                           config=None, folds=5, backend=None) -> Report:
    for r in times:
        if r < 1:
            raise ParameterError("generation times must be >= 1")
    return _sweep("sweep_generation_times", "proposals", dataset, times, config, seed, folds,
                  backend, lambda c, v: c.replace(proposals=int(v), max_size=int(S)),
                  {"max_size": int(S)})


def _robustness_configs(cnn_config, knn_config):
    return (("mimtcnn", cnn_config if cnn_config is not None else TrainConfig()),
            ("mlknn", knn_config if knn_config is not None else MlknnConfig()))


def subsample_experiment(dataset, fractions=(1.0, 0.9, 0.8, 0.7, 0.6), seed=0, cnn_config=None,
                         knn_config=None, folds=5, backend=None) -> Report:
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ParameterError(f"fraction {f} outside (0, 1]")
    models = _robustness_configs(cnn_config, knn_config)
    split = kfold_split(dataset.n_samples, folds, derive_seed(seed, "split"))
    report = Report("subsample", _echo(
        "subsample", dataset, seed, folds, param="train_fraction", values=list(fractions),
        model_configs={k: _config_dict(c) for k, c in models}))
    for kind, cfg in models:
        for f in fractions:
            report.points.append(_cv_point(dataset, kind, cfg, seed, split,
                                           param="train_fraction", value=f, train_fraction=f,
                                           backend=backend, timings=report.timings))
    return report


def noise_experiment(dataset, noise_counts=(0, 5, 10, 15, 20), seed=0, cnn_config=None,
                     knn_config=None, folds=5, backend=None) -> Report:
    models = _robustness_configs(cnn_config, knn_config)
    split = kfold_split(dataset.n_samples, folds, derive_seed(seed, "split"))
    report = Report("noise", _echo(
        "noise", dataset, seed, folds, param="noise_features", values=list(noise_counts),
        model_configs={k: _config_dict(c) for k, c in models}))
    noisy = {c: add_noise_features(dataset, int(c), derive_seed(seed, "noise", int(c)))
             for c in noise_counts}
    for kind, cfg in models:
        for c in noise_counts:
            report.points.append(_cv_point(noisy[c], kind, cfg, seed, split,
                                           param="noise_features", value=c,
                                           backend=backend, timings=report.timings))
    return report


def relative_drop(report: Report, model: str, reference, value, metric="map") -> float:
    ref = report.mean_metric(metric, model=model, value=reference)
    return (ref - report.mean_metric(metric, model=model, value=value)) / ref


def config_from_dict(kind, d):
    if kind == "mimtcnn":
        return TrainConfig(**d)
    if kind == "mlknn":
        return MlknnConfig(**d)
    if kind == "mlp":
        return MlpConfig(**d)
    raise ParameterError(f"unknown model kind {kind!r}")


def rerun_from_echo(echo: dict, dataset: Dataset, backend=None) -> Report:
    """Regenerate a report from its configuration echo on the same dataset."""
    if echo["dataset"]["fingerprint"] != dataset_fingerprint(dataset):
        raise ParameterError("dataset does not match the report's fingerprint")
    exp, seed, folds = echo["experiment"], echo["seed"], echo["folds"]
    if exp == "cv":
        return run_cv(dataset, echo["model"], config_from_dict(echo["model"], echo["model_config"]),
                      seed, folds, keys=echo.get("keys"), backend=backend)
    if exp in ("sweep_max_size", "sweep_generation_times"):
        cfg = TrainConfig(**echo["model_config"])
        if exp == "sweep_max_size":
            return sweep_max_size(dataset, echo["values"], echo["fixed"]["proposals"], seed,
                                  cfg, folds, backend)
        return sweep_generation_times(dataset, echo["values"], echo["fixed"]["max_size"], seed,
                                      cfg, folds, backend)
    if exp in ("subsample", "noise"):
        mc = echo["model_configs"]
        cnn = TrainConfig(**mc["mimtcnn"])
        knn = MlknnConfig(**mc["mlknn"])
        fn = subsample_experiment if exp == "subsample" else noise_experiment
        return fn(dataset, echo["values"], seed, cnn, knn, folds, backend)
    raise ParameterError(f"unknown experiment {exp!r}")
