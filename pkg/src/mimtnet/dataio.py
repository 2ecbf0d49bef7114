"""Binary multi-label datasets: CSV interchange and a planted-signal generator.

CSV layout: one header line, feature columns ``x_<name>`` followed by label
columns ``y_<name>``, cells exactly ``0`` or ``1``, ``\\n`` line endings, no
quoting.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, GenerationError, ParameterError

FEATURE_PREFIX = "x_"
LABEL_PREFIX = "y_"
MAX_GENERATION_ATTEMPTS = 1000


@dataclass(eq=False)
class Dataset:
    """A p x d binary feature matrix with its p x n binary label matrix."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    label_names: list[str]

    def __post_init__(self):
        self.features = _as_binary(self.features, "features")
        self.labels = _as_binary(self.labels, "labels")
        self.feature_names = list(self.feature_names)
        self.label_names = list(self.label_names)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"features have {self.features.shape[0]} rows, labels {self.labels.shape[0]}"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise DataFormatError("feature_names length does not match feature count")
        if len(self.label_names) != self.labels.shape[1]:
            raise DataFormatError("label_names length does not match label count")
        for kind, names in (("feature", self.feature_names), ("label", self.label_names)):
            if len(set(names)) != len(names):
                raise DataFormatError(f"duplicate {kind} names")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.labels.shape[1]

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.feature_names, self.label_names)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and self.label_names == other.label_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def _as_binary(a, what):
    a = np.asarray(a)
    if a.ndim != 2:
        raise DataFormatError(f"{what} must be a 2-D matrix, got shape {a.shape}")
    if a.size and not np.isin(a, (0, 1)).all():
        raise DataFormatError(f"{what} must contain only 0 and 1")
    return a.astype(np.uint8)


def load_csv(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0]:
        raise DataFormatError(f"{path}: missing header row")

    header = lines[0].split(",")
    x_cols, y_cols = [], []
    for j, name in enumerate(header):
        if name.startswith(FEATURE_PREFIX):
            x_cols.append(j)
        elif name.startswith(LABEL_PREFIX):
            y_cols.append(j)
        else:
            raise DataFormatError(f"{path}: column {name!r} lacks an x_ or y_ prefix")
    if not x_cols or not y_cols:
        raise DataFormatError(f"{path}: need at least one x_ and one y_ column")

    width = len(header)
    data = np.zeros((len(lines) - 1, width), dtype=np.uint8)
    for i, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != width:
            raise DataFormatError(f"{path}: row {i} has {len(cells)} cells, expected {width}")
        for j, cell in enumerate(cells):
            if cell == "1":
                data[i - 1, j] = 1
            elif cell != "0":
                raise DataFormatError(
                    f"{path}: malformed cell {cell!r} at row {i}, column {header[j]}"
                )

    return Dataset(
        features=data[:, x_cols],
        labels=data[:, y_cols],
        feature_names=[header[j][len(FEATURE_PREFIX):] for j in x_cols],
        label_names=[header[j][len(LABEL_PREFIX):] for j in y_cols],
    )


def save_csv(dataset: Dataset, path) -> None:
    header = [FEATURE_PREFIX + s for s in dataset.feature_names]
    header += [LABEL_PREFIX + s for s in dataset.label_names]
    block = np.hstack([dataset.features, dataset.labels])
    out = [",".join(header)]
    digits = np.where(block == 1, "1", "0")
    out.extend(",".join(row) for row in digits)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


@dataclass(frozen=True)
class SyntheticSpec:
    patients: int = 1180
    features: int = 186
    tasks: int = 12
    keys_per_task: int = 5
    max_active_tasks: int = 4
    max_symptoms: int = 18
    background_rate: float = 0.03
    label_flip_rate: float = 0.0
    min_task_frequency: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("patients", "features", "tasks", "keys_per_task",
                     "max_active_tasks", "max_symptoms"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.min_task_frequency < 0:
            raise ParameterError("min_task_frequency must be non-negative")
        for name in ("background_rate", "label_flip_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.keys_per_task * self.tasks > self.features:
            raise ParameterError("keys_per_task * tasks exceeds features (key sets are disjoint)")
        if self.max_active_tasks > self.tasks:
            raise ParameterError("max_active_tasks exceeds tasks")
        if self.max_symptoms < max(2, self.max_active_tasks):
            raise ParameterError("max_symptoms must be >= max(2, max_active_tasks)")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, list[np.ndarray]]:
    """Draw a corpus whose label t is the OR of task t's key features.

    Returns the dataset and, per task, the sorted indices of its key features.
    The whole corpus is redrawn until every task reaches
    ``min_task_frequency`` positives.
    """
    rng = np.random.default_rng(spec.seed)
    n, k, d = spec.tasks, spec.keys_per_task, spec.features
    perm = rng.permutation(d)
    keys = [np.sort(perm[t * k:(t + 1) * k]) for t in range(n)]
    key_owner = np.full(d, -1, dtype=np.int64)
    for t, ks in enumerate(keys):
        key_owner[ks] = t

    for _ in range(MAX_GENERATION_ATTEMPTS):
        X = np.zeros((spec.patients, d), dtype=np.uint8)
        Y = np.zeros((spec.patients, n), dtype=np.uint8)
        for i in range(spec.patients):
            X[i], active = _draw_patient(rng, spec, keys, key_owner)
            Y[i, active] = 1
        if spec.label_flip_rate > 0:
            flips = rng.random(Y.shape) < spec.label_flip_rate
            Y ^= flips.astype(np.uint8)
        if (Y.sum(axis=0) >= spec.min_task_frequency).all():
            break
    else:
        raise GenerationError(
            f"no corpus met min_task_frequency={spec.min_task_frequency} in "
            f"{MAX_GENERATION_ATTEMPTS} attempts; increase patients or lower the frequency"
        )

    ds = Dataset(
        features=X,
        labels=Y,
        feature_names=[f"s{j:03d}" for j in range(d)],
        label_names=[f"t{t:02d}" for t in range(n)],
    )
    return ds, keys


def _draw_patient(rng, spec, keys, key_owner):
    d, k = spec.features, spec.keys_per_task
    row = np.zeros(d, dtype=np.uint8)
    n_active = int(rng.integers(1, spec.max_active_tasks + 1))
    active = np.sort(rng.choice(spec.tasks, size=n_active, replace=False))
    for t in active:
        while True:
            mask = rng.random(k) < 0.5
            if mask.any():
                break
        row[keys[t][mask]] = 1

    background = key_owner < 0
    row[background & (rng.random(d) < spec.background_rate)] = 1

    excess = int(row.sum()) - spec.max_symptoms
    if excess > 0:
        on_bg = np.flatnonzero(background & (row == 1))
        drop = rng.choice(on_bg, size=min(excess, on_bg.size), replace=False)
        row[drop] = 0
        excess -= drop.size
    while excess > 0:
        # too many keys: drop one, never the last active key of a task
        on_keys = np.flatnonzero(row == 1)
        owners = key_owner[on_keys]
        counts = np.bincount(owners, minlength=spec.tasks)
        removable = on_keys[counts[owners] > 1]
        row[rng.choice(removable)] = 0
        excess -= 1

    while row.sum() < 2:
        off_bg = np.flatnonzero(background & (row == 0))
        if off_bg.size == 0:
            off_bg = np.flatnonzero(np.isin(key_owner, active) & (row == 0))
        if off_bg.size == 0:
            raise GenerationError("cannot reach 2 active features for a patient")
        row[rng.choice(off_bg)] = 1
    return row, active
