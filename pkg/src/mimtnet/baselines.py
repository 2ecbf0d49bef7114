"""Comparison models: ML-KNN and a one-hidden-layer MLP."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ParameterError, ShapeError, TrainingError
from .network import logit_residual, sigmoid
from .training import AdamState, adam_step, bce_loss, init_rng

MODEL_KINDS = ("mimtcnn", "mlknn", "mlp")


# ---------------------------------------------------------------- ML-KNN


@dataclass(eq=False)
class MlknnModel:
    features: np.ndarray      # p x d training rows
    labels: np.ndarray        # p x n
    k: int
    s: float
    prior_pos: np.ndarray     # n
    cond_pos: np.ndarray      # n x (k+1): P(j positive neighbours | label 1)
    cond_neg: np.ndarray      # n x (k+1): P(j positive neighbours | label 0)
    feature_names: list[str] = field(default_factory=list)
    label_names: list[str] = field(default_factory=list)


def _sq_distances(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def _neighbours(dist, k):
    # stable sort: equal distances resolve to the lower training index
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def mlknn_fit_arrays(X, Y, k=20, s=1.0) -> MlknnModel:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y).astype(np.int64)
    p, n = Y.shape
    if k < 1:
        raise ParameterError("k must be >= 1")
    if not s > 0:
        raise ParameterError("smoothing s must be positive")
    if p <= k:
        raise ParameterError(f"ML-KNN needs more training points than k (p={p}, k={k})")

    prior_pos = (s + Y.sum(axis=0)) / (2 * s + p)

    dist = _sq_distances(X, X)
    np.fill_diagonal(dist, np.inf)
    counts = Y[_neighbours(dist, k)].sum(axis=1)  # p x n neighbour-positive tallies

    c_pos = np.zeros((n, k + 1))
    c_neg = np.zeros((n, k + 1))
    for t in range(n):
        c_pos[t] = np.bincount(counts[Y[:, t] == 1, t], minlength=k + 1)
        c_neg[t] = np.bincount(counts[Y[:, t] == 0, t], minlength=k + 1)
    cond_pos = (s + c_pos) / (s * (k + 1) + c_pos.sum(axis=1, keepdims=True))
    cond_neg = (s + c_neg) / (s * (k + 1) + c_neg.sum(axis=1, keepdims=True))
    return MlknnModel(X.copy(), Y.astype(np.uint8), k, float(s), prior_pos, cond_pos, cond_neg)


def mlknn_fit(dataset: Dataset, k=20, s=1.0) -> MlknnModel:
    model = mlknn_fit_arrays(dataset.features, dataset.labels, k, s)
    model.feature_names = list(dataset.feature_names)
    model.label_names = list(dataset.label_names)
    return model


def mlknn_predict(model: MlknnModel, features) -> np.ndarray:
    """Posterior P(label = 1 | neighbour counts) for every query and task."""
    Q = np.asarray(features, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != model.features.shape[1]:
        raise ShapeError(f"expected queries with {model.features.shape[1]} features, got {Q.shape}")
    n = model.labels.shape[1]
    if Q.shape[0] == 0:
        return np.empty((0, n))
    counts = model.labels.astype(np.int64)[_neighbours(_sq_distances(Q, model.features), model.k)]
    counts = counts.sum(axis=1)
    tasks = np.arange(n)[None, :]
    p1 = model.prior_pos[None, :] * model.cond_pos[tasks, counts]
    p0 = (1.0 - model.prior_pos[None, :]) * model.cond_neg[tasks, counts]
    return p1 / (p1 + p0)


# ---------------------------------------------------------------- MLP


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 128
    epochs: int = 100
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.hidden < 1:
            raise ParameterError("epochs and hidden must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ParameterError("Adam betas must lie strictly between 0 and 1")

    def replace(self, **changes) -> MlpConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


MLP_PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(eq=False)
class MlpParams:
    w1: np.ndarray  # H x d
    b1: np.ndarray
    w2: np.ndarray  # n x H
    b2: np.ndarray

    def arrays(self):
        return {k: getattr(self, k) for k in MLP_PARAM_NAMES}

    def replace(self, **arrays):
        out = MlpParams(**{**self.arrays(), **arrays})
        for name, a in out.arrays().items():
            if not np.isfinite(a).all():
                raise ValueError(f"{name} has non-finite entries")
        return out


@dataclass(eq=False)
class MlpModel:
    params: MlpParams
    config: MlpConfig
    feature_names: list[str]
    label_names: list[str]
    loss_history: list[float] = field(default_factory=list)


def mlp_logits(params: MlpParams, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.w1.shape[1]:
        raise ShapeError(f"expected m x {params.w1.shape[1]} features, got {X.shape}")
    return np.maximum(X @ params.w1.T + params.b1, 0.0) @ params.w2.T + params.b2


def mlp_loss_and_grad(params: MlpParams, X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    pre = X @ params.w1.T + params.b1
    h = np.maximum(pre, 0.0)
    s = h @ params.w2.T + params.b2
    delta = logit_residual(s, Y)
    dpre = (delta @ params.w2) * (pre > 0)
    grads = MlpParams(w1=dpre.T @ X, b1=dpre.sum(0), w2=delta.T @ h, b2=delta.sum(0))
    return bce_loss(s, Y), grads


def mlp_init(d, n, config: MlpConfig) -> MlpParams:
    rng = init_rng(config.seed, 2)
    H = config.hidden
    b_in = np.sqrt(6.0 / (d + H))
    b_out = np.sqrt(6.0 / (H + n))
    return MlpParams(
        w1=rng.uniform(-b_in, b_in, size=(H, d)), b1=np.zeros(H),
        w2=rng.uniform(-b_out, b_out, size=(n, H)), b2=np.zeros(n),
    )


def mlp_train(dataset: Dataset, config: MlpConfig) -> MlpModel:
    if dataset.n_samples == 0:
        raise ParameterError("cannot train on an empty dataset")
    X = dataset.features.astype(np.float64)
    Y = dataset.labels.astype(np.float64)
    params = mlp_init(dataset.n_features, dataset.n_tasks, config)
    state = AdamState.zeros_like(params)
    history = []
    for epoch in range(1, config.epochs + 1):
        loss, grads = mlp_loss_and_grad(params, X, Y)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        history.append(loss)
        try:
            params, state = adam_step(params, grads, state, config)
        except ValueError as exc:
            raise TrainingError(f"parameters diverged at epoch {epoch}: {exc}") from exc
    return MlpModel(params, config, list(dataset.feature_names), list(dataset.label_names), history)


def mlp_predict(model: MlpModel, features):
    s = mlp_logits(model.params, features)
    probs = sigmoid(s).reshape(s.shape)
    return probs, (probs > 0.5).astype(np.uint8)
