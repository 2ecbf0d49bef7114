"""Multi-label evaluation: MAP, coverage, subset accuracy, hamming loss, P/R.

Rankings are deterministic: ties break toward the smaller sample or label
index. Coverage is the standard depth-to-cover-all-true-labels count divided by
the number of labels, so it lies in [0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedMetricError

COVERAGE_NOTE = (
    "coverage = mean over samples with >=1 true label of "
    "(max rank of a true label - 1) / n_labels"
)


@dataclass(frozen=True, eq=False)
class EvalInput:
    probs: np.ndarray
    hard: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        hard = np.asarray(self.hard).astype(np.int8)
        truth = np.asarray(self.truth).astype(np.int8)
        if not probs.shape == hard.shape == truth.shape or probs.ndim != 2:
            raise ShapeError(f"shape mismatch: {probs.shape}, {hard.shape}, {truth.shape}")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "hard", hard)
        object.__setattr__(self, "truth", truth)

    @classmethod
    def from_probs(cls, probs, truth, threshold=0.5) -> EvalInput:
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs, (probs > threshold).astype(np.int8), truth)


def _descending_order(scores):
    # stable sort of negated scores keeps equal scores in index order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(scores, truth) -> float:
    truth = np.asarray(truth).astype(bool)
    positives = int(truth.sum())
    if positives == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    hits = truth[_descending_order(scores)]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, positives + 1) / ranks
    return float(precision_at_hits.mean())


def mean_average_precision(inp: EvalInput, *, return_excluded=False):
    """Mean AP over tasks with at least one positive.

    With ``return_excluded`` the number of skipped (positive-free) tasks is
    returned alongside.
    """
    aps = []
    for t in range(inp.truth.shape[1]):
        if inp.truth[:, t].any():
            aps.append(average_precision(inp.probs[:, t], inp.truth[:, t]))
    excluded = inp.truth.shape[1] - len(aps)
    if not aps:
        raise UndefinedMetricError("no task has a positive example")
    value = float(np.mean(aps))
    return (value, excluded) if return_excluded else value


def coverage(inp: EvalInput, *, return_skipped=False):
    n = inp.truth.shape[1]
    keep = inp.truth.any(axis=1)
    skipped = int((~keep).sum())
    if not keep.any():
        raise UndefinedMetricError("no sample has a true label")
    probs, truth = inp.probs[keep], inp.truth[keep].astype(bool)
    order = np.argsort(-probs, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(1, n + 1)[None, :].repeat(len(order), 0), axis=1)
    deepest = np.where(truth, rank, 0).max(axis=1)
    value = float(np.mean((deepest - 1) / n))
    return (value, skipped) if return_skipped else value


def subset_accuracy(inp: EvalInput) -> float:
    if inp.truth.shape[0] == 0:
        raise UndefinedMetricError("subset accuracy needs at least one sample")
    return float(np.mean((inp.hard == inp.truth).all(axis=1)))


def hamming_loss(inp: EvalInput) -> float:
    if inp.truth.size == 0:
        raise UndefinedMetricError("hamming loss needs at least one label slot")
    return float(np.mean(inp.hard != inp.truth))


def precision_recall_per_task(inp: EvalInput) -> tuple[np.ndarray, np.ndarray]:
    """Per-task precision and recall; NaN marks an undefined ratio (0/0)."""
    pred = inp.hard.astype(bool)
    true = inp.truth.astype(bool)
    tp = (pred & true).sum(axis=0).astype(np.float64)
    fp = (pred & ~true).sum(axis=0)
    fn = (~pred & true).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), np.nan)
        recall = np.where(tp + fn > 0, tp / (tp + fn), np.nan)
    return precision, recall


def evaluate(inp: EvalInput) -> dict:
    """All metrics for one evaluation; undefined values come back as None."""
    out = {}
    try:
        out["map"], out["map_excluded_tasks"] = mean_average_precision(inp, return_excluded=True)
    except UndefinedMetricError:
        out["map"], out["map_excluded_tasks"] = None, inp.truth.shape[1]
    try:
        out["coverage"], out["coverage_skipped_samples"] = coverage(inp, return_skipped=True)
    except UndefinedMetricError:
        out["coverage"], out["coverage_skipped_samples"] = None, inp.truth.shape[0]
    out["subset_accuracy"] = subset_accuracy(inp)
    out["hamming_loss"] = hamming_loss(inp)
    precision, recall = precision_recall_per_task(inp)
    out["precision"] = [None if np.isnan(v) else float(v) for v in precision]
    out["recall"] = [None if np.isnan(v) else float(v) for v in recall]
    out["undefined_precision"] = int(np.isnan(precision).sum())
    out["undefined_recall"] = int(np.isnan(recall).sum())
    return out
