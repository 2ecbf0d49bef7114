"""Summed binary cross-entropy, exact backpropagation, Adam, full-batch training."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ParameterError, ShapeError, TrainingError
from .network import (
    CONV_MODES,
    PARAM_NAMES,
    ForwardTrace,
    ModelParams,
    batch_forward,
    glorot_params,
    logit_residual,
    sigmoid,
)
from .sampler import ProposalSet, generate_proposals

INIT_SCHEMES = ("glorot-uniform",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.1
    proposals: int = 500
    max_size: int = 10
    filters: int = 4
    hidden: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    init_scale: str = "glorot-uniform"
    conv_mode: str = "local"

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        for name in ("proposals", "max_size", "filters", "hidden"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie strictly between 0 and 1")
        if not self.adam_epsilon > 0:
            raise ParameterError("adam_epsilon must be positive")
        if self.init_scale not in INIT_SCHEMES:
            raise ParameterError(f"init_scale must be one of {INIT_SCHEMES}")
        if self.conv_mode not in CONV_MODES:
            raise ParameterError(f"conv_mode must be one of {CONV_MODES}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        arrays = params.arrays()
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()}, 0)


@dataclass(eq=False)
class Model:
    params: ModelParams
    proposal_set: ProposalSet
    config: TrainConfig
    label_names: list[str]
    feature_names: list[str]
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.params.check_proposals(self.proposal_set)
        if len(self.feature_names) != self.proposal_set.feature_count:
            raise ShapeError("feature_names do not match the proposal feature count")
        if len(self.label_names) != self.params.n_tasks:
            raise ShapeError("label_names do not match the number of task heads")


def bce_loss(bag_logits, labels) -> float:
    """Summed cross-entropy over samples and tasks, taken directly on logits."""
    s = np.asarray(bag_logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ShapeError(f"logits {s.shape} and labels {y.shape} differ")
    return float(np.sum(np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))))


def pooled_score_grad(trace: ForwardTrace, label_row) -> np.ndarray:
    """d loss / d instance scores (R x n): one nonzero row per task, its argmax."""
    delta = logit_residual(trace.bag_scores, label_row)
    G = np.zeros_like(trace.scores)
    G[trace.argmax_r, np.arange(G.shape[1])] = delta
    return G


def backward(params: ModelParams, traces, labels) -> ModelParams:
    """Gradient of ``bce_loss`` from per-sample forward traces, summed over samples."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] != len(traces):
        raise ShapeError(f"{len(traces)} traces but {labels.shape[0]} label rows")
    grads = {k: np.zeros_like(a) for k, a in params.arrays().items()}
    for tr, y in zip(traces, labels):
        G = pooled_score_grad(tr, y)
        grads["fc2_w"] += G.T @ tr.fc1_act
        grads["fc2_b"] += G.sum(axis=0)
        dH = (G @ params.fc2_w) * (tr.fc1_pre > 0)
        grads["fc1_w"] += dH.T @ tr.conv_act
        grads["fc1_b"] += dH.sum(axis=0)
        dC = (dH @ params.fc1_w) * (tr.conv_pre > 0)
        dW = np.einsum("rf,rs->rfs", dC, tr.instances)
        if params.conv_mode == "shared":
            grads["conv_w"] += dW.sum(axis=0)
            grads["conv_b"] += dC.sum(axis=0)
        else:
            grads["conv_w"] += dW
            grads["conv_b"] += dC
    return ModelParams(**grads)


def loss_and_grad(params: ModelParams, X, ps: ProposalSet, Y, backend=None):
    """Loss and exact gradient over a batch, recomputing only argmax rows.

    Pooling passes gradient to one proposal per (sample, task), so the backward
    pass needs activations for just those m x n rows.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    bag, arg = batch_forward(params, X, ps, backend=backend)
    if Y.shape != bag.shape:
        raise ShapeError(f"labels {Y.shape} do not match outputs {bag.shape}")
    loss = bce_loss(bag, Y)
    delta = logit_residual(bag, Y)  # m x n

    m, n = bag.shape
    idx = ps.index_matrix()
    padded = np.concatenate([X, np.zeros((m, 1))], axis=1)
    inst = padded[np.arange(m)[:, None, None], idx[arg]]   # m x n x S
    conv_w, conv_b = params.expanded_conv(len(ps))
    conv_pre = np.einsum("itfs,its->itf", conv_w[arg], inst) + conv_b[arg]
    conv_act = np.maximum(conv_pre, 0.0)
    fc1_pre = conv_act @ params.fc1_w.T + params.fc1_b     # m x n x H
    fc1_act = np.maximum(fc1_pre, 0.0)

    g_fc2_w = np.einsum("it,ith->th", delta, fc1_act)
    g_fc2_b = delta.sum(axis=0)
    dH = delta[:, :, None] * params.fc2_w[None, :, :] * (fc1_pre > 0)
    g_fc1_w = np.einsum("ith,itf->hf", dH, conv_act)
    g_fc1_b = dH.sum(axis=(0, 1))
    dC = (dH @ params.fc1_w) * (conv_pre > 0)              # m x n x F
    dW = dC[..., None] * inst[:, :, None, :]               # m x n x F x S
    if params.conv_mode == "shared":
        g_conv_w = dW.sum(axis=(0, 1))
        g_conv_b = dC.sum(axis=(0, 1))
    else:
        g_conv_w = np.zeros_like(params.conv_w)
        g_conv_b = np.zeros_like(params.conv_b)
        flat = arg.ravel()
        np.add.at(g_conv_w, flat, dW.reshape(-1, *dW.shape[2:]))
        np.add.at(g_conv_b, flat, dC.reshape(-1, dC.shape[2]))
    grads = ModelParams(g_conv_w, g_conv_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b)
    return loss, grads


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns new params and state.

    Works for any params object exposing ``arrays()`` and ``replace(**arrays)``.
    """
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    g_all = grads.arrays()
    for name, p in params.arrays().items():
        g = g_all[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return params.replace(**new_p), AdamState(new_m, new_v, t)


def init_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def init_model_params(config: TrainConfig, ps: ProposalSet, n_tasks: int) -> ModelParams:
    return glorot_params(len(ps), ps.max_size, config.filters, config.hidden, n_tasks,
                         init_rng(config.seed, 1), conv_mode=config.conv_mode)


def train(dataset: Dataset, config: TrainConfig, backend=None) -> Model:
    if dataset.n_samples == 0:
        raise ParameterError("cannot train on an empty dataset")
    ps = generate_proposals(dataset.n_features, config.proposals, config.max_size, config.seed)
    params = init_model_params(config, ps, dataset.n_tasks)
    X = dataset.features.astype(np.float64)
    Y = dataset.labels.astype(np.float64)

    state = AdamState.zeros_like(params)
    history = []
    for epoch in range(1, config.epochs + 1):
        loss, grads = loss_and_grad(params, X, ps, Y, backend=backend)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        history.append(loss)
        try:
            params, state = adam_step(params, grads, state, config)
        except ValueError as exc:
            raise TrainingError(f"parameters diverged at epoch {epoch}: {exc}") from exc

    return Model(params, ps, config, list(dataset.label_names),
                 list(dataset.feature_names), history)


def predict(model: Model, features, backend=None):
    """Probabilities and hard labels (prob > 0.5) for each row of ``features``."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != model.proposal_set.feature_count:
        raise ShapeError(
            f"expected p x {model.proposal_set.feature_count} features, got {features.shape}"
        )
    bag, _ = batch_forward(model.params, features, model.proposal_set, backend=backend)
    probs = sigmoid(bag).reshape(bag.shape)
    return probs, (probs > 0.5).astype(np.uint8)


def predict_with_keys(model: Model, features, backend=None):
    """Like ``predict`` but also returns the m x n argmax proposal indices."""
    bag, arg = batch_forward(model.params, np.asarray(features), model.proposal_set,
                             backend=backend)
    probs = sigmoid(bag).reshape(bag.shape)
    return probs, (probs > 0.5).astype(np.uint8), arg


__all__ = [
    "PARAM_NAMES", "TrainConfig", "AdamState", "Model", "bce_loss", "backward",
    "pooled_score_grad", "loss_and_grad", "adam_step", "train", "predict",
    "predict_with_keys",
]
