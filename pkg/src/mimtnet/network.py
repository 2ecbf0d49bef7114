"""MIMT-CNN forward pass.

Per proposal: convolution (one kernel application over the padded proposal)
-> ReLU -> dense(H) -> ReLU -> dense(n) gives instance scores; the bag score
for each task is the max over proposals, and the output is its sigmoid.

Convolution kernels are either ``local`` (one kernel bank per proposal, so
weights know which features they read) or ``shared`` (a single bank slid over
every proposal).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import _kernels
from .errors import ShapeError
from .sampler import ProposalSet

PARAM_NAMES = ("conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
CONV_MODES = ("local", "shared")

_TINY = np.finfo(np.float64).tiny
_BELOW_ONE = np.nextafter(1.0, 0.0)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    """Logistic function, evaluated without overflow and clamped into (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = np.clip(out, _TINY, _BELOW_ONE)
    return out[()] if out.ndim == 0 else out


def logit_residual(s, y):
    """sigmoid(s) - y for binary y, without cancellation when s and y agree."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    e = np.exp(-np.abs(s))
    # 1 - sigmoid(s) == sigmoid(-s)
    pos = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    neg = np.where(s >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return (1.0 - y) * pos - y * neg


@dataclass(eq=False)
class ModelParams:
    """Network weights.

    conv_w is (R, F, S) in local mode, (F, S) in shared mode; conv_b is
    (R, F) or (F,) to match.
    """

    conv_w: np.ndarray
    conv_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        cw, cb = self.conv_w, self.conv_b
        if cw.ndim not in (2, 3) or cb.shape != cw.shape[:-1]:
            raise ShapeError(f"conv_w {cw.shape} and conv_b {cb.shape} are inconsistent")
        F = cw.shape[-2]
        H = self.fc1_w.shape[0]
        if self.fc1_w.shape != (H, F) or self.fc1_b.shape != (H,):
            raise ShapeError(f"fc1 shapes {self.fc1_w.shape}/{self.fc1_b.shape} do not fit F={F}")
        n = self.fc2_w.shape[0]
        if self.fc2_w.shape != (n, H) or self.fc2_b.shape != (n,):
            raise ShapeError(f"fc2 shapes {self.fc2_w.shape}/{self.fc2_b.shape} do not fit H={H}")
        for name in PARAM_NAMES:
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} has non-finite entries")

    @property
    def conv_mode(self) -> str:
        return "shared" if self.conv_w.ndim == 2 else "local"

    @property
    def max_size(self) -> int:
        return self.conv_w.shape[-1]

    @property
    def filters(self) -> int:
        return self.conv_w.shape[-2]

    @property
    def hidden(self) -> int:
        return self.fc1_w.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.fc2_w.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, **arrays) -> ModelParams:
        return ModelParams(**{**self.arrays(), **arrays})

    def expanded_conv(self, R: int) -> tuple[np.ndarray, np.ndarray]:
        """Convolution weights as an (R, F, S) bank plus (R, F) biases."""
        if self.conv_mode == "shared":
            return (np.broadcast_to(self.conv_w, (R,) + self.conv_w.shape),
                    np.broadcast_to(self.conv_b, (R,) + self.conv_b.shape))
        if self.conv_w.shape[0] != R:
            raise ShapeError(f"local kernels cover {self.conv_w.shape[0]} proposals, got {R}")
        return self.conv_w, self.conv_b

    def check_proposals(self, ps: ProposalSet) -> None:
        if ps.max_size != self.max_size:
            raise ShapeError(f"proposal max size {ps.max_size} != kernel width {self.max_size}")
        if self.conv_mode == "local" and self.conv_w.shape[0] != len(ps):
            raise ShapeError(f"{len(ps)} proposals but {self.conv_w.shape[0]} local kernels")

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_NAMES)


def zero_params(R, S, F, H, n, conv_mode="local") -> ModelParams:
    conv_shape = (R, F, S) if conv_mode == "local" else (F, S)
    return ModelParams(
        conv_w=np.zeros(conv_shape), conv_b=np.zeros(conv_shape[:-1]),
        fc1_w=np.zeros((H, F)), fc1_b=np.zeros(H),
        fc2_w=np.zeros((n, H)), fc2_b=np.zeros(n),
    )


def glorot_params(R, S, F, H, n, rng, conv_mode="local") -> ModelParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.

    Draw order is fixed: conv, fc1, fc2.
    """
    conv_shape = (R, F, S) if conv_mode == "local" else (F, S)

    def draw(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        conv_w=draw(conv_shape, S, F), conv_b=np.zeros(conv_shape[:-1]),
        fc1_w=draw((H, F), F, H), fc1_b=np.zeros(H),
        fc2_w=draw((n, H), H, n), fc2_b=np.zeros(n),
    )


@dataclass(eq=False)
class ForwardTrace:
    """Every intermediate of one patient's forward pass."""

    instances: np.ndarray   # R x S
    conv_pre: np.ndarray    # R x F
    conv_act: np.ndarray    # R x F
    fc1_pre: np.ndarray     # R x H
    fc1_act: np.ndarray     # R x H
    scores: np.ndarray      # R x n
    bag_scores: np.ndarray  # n
    argmax_r: np.ndarray    # n
    probs: np.ndarray       # n


def mil_pool(scores):
    """Per-task max over instance scores (R x n) and the winning row.

    Ties go to the smallest row index. A bag is positive (sigmoid > 0.5)
    exactly when at least one instance score is positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    argmax_r = np.argmax(scores, axis=0)
    return scores[argmax_r, np.arange(scores.shape[1])], argmax_r


def forward(params: ModelParams, instances) -> ForwardTrace:
    """Reference forward pass for a single patient's R x S instance matrix."""
    instances = np.asarray(instances, dtype=np.float64)
    if instances.ndim != 2 or instances.shape[1] != params.max_size:
        raise ShapeError(f"instances must be R x {params.max_size}, got {instances.shape}")
    R = instances.shape[0]
    conv_w, conv_b = params.expanded_conv(R)

    conv_pre = np.einsum("rfs,rs->rf", conv_w, instances) + conv_b
    conv_act = relu(conv_pre)
    fc1_pre = conv_act @ params.fc1_w.T + params.fc1_b
    fc1_act = relu(fc1_pre)
    scores = fc1_act @ params.fc2_w.T + params.fc2_b
    bag, argmax_r = mil_pool(scores)
    return ForwardTrace(instances, conv_pre, conv_act, fc1_pre, fc1_act,
                        scores, bag, argmax_r, sigmoid(bag))


def batch_forward(params: ModelParams, X, ps: ProposalSet, backend=None):
    """Bag logits (m x n) and argmax proposal indices (m x n) for rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ps.feature_count:
        raise ShapeError(f"expected m x {ps.feature_count} features, got {X.shape}")
    params.check_proposals(ps)
    conv_w, conv_b = params.expanded_conv(len(ps))
    return _kernels.bag_scores(
        X, ps.index_matrix(), conv_w, conv_b,
        params.fc1_w, params.fc1_b, params.fc2_w, params.fc2_b, backend=backend,
    )


def key_proposals(trace: ForwardTrace, ps: ProposalSet) -> list[tuple[int, ...]]:
    """Per task, the feature subset of the proposal that won the max pooling."""
    return [ps.proposals[int(r)] for r in trace.argmax_r]
