"""Model files: one JSON document, format ``mimtnet-model-v1``.

Real matrices are written as decimal strings with 17 significant digits, which
round-trip IEEE doubles exactly, so a reloaded model predicts bit-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import MlknnModel, MlpConfig, MlpModel, MlpParams
from .errors import DataFormatError
from .network import PARAM_NAMES, ModelParams
from .sampler import ProposalSet
from .training import Model, TrainConfig

MODEL_FORMAT = "mimtnet-model-v1"


def encode_matrix(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "values": [format(v, ".17g") for v in a.ravel().tolist()]}


def decode_matrix(doc) -> np.ndarray:
    try:
        values = np.array([float(v) for v in doc["values"]], dtype=np.float64)
        return values.reshape(doc["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed matrix entry: {exc}") from exc


def _encode_floats(xs):
    return [format(float(v), ".17g") for v in xs]


def model_to_document(model) -> dict:
    if isinstance(model, Model):
        ps = model.proposal_set
        return {
            "format": MODEL_FORMAT,
            "kind": "mimtcnn",
            "config": model.config.to_dict(),
            "feature_names": model.feature_names,
            "label_names": model.label_names,
            "proposals": {
                "max_size": ps.max_size,
                "feature_count": ps.feature_count,
                "seed": ps.seed,
                "indices": [list(p) for p in ps.proposals],
            },
            "params": {k: encode_matrix(v) for k, v in model.params.arrays().items()},
            "loss_history": _encode_floats(model.loss_history),
        }
    if isinstance(model, MlpModel):
        return {
            "format": MODEL_FORMAT,
            "kind": "mlp",
            "config": model.config.to_dict(),
            "feature_names": model.feature_names,
            "label_names": model.label_names,
            "params": {k: encode_matrix(v) for k, v in model.params.arrays().items()},
            "loss_history": _encode_floats(model.loss_history),
        }
    if isinstance(model, MlknnModel):
        return {
            "format": MODEL_FORMAT,
            "kind": "mlknn",
            "config": {"k": model.k, "s": model.s},
            "feature_names": model.feature_names,
            "label_names": model.label_names,
            "train_features": encode_matrix(model.features),
            "train_labels": model.labels.astype(int).tolist(),
            "prior_pos": _encode_floats(model.prior_pos),
            "cond_pos": encode_matrix(model.cond_pos),
            "cond_neg": encode_matrix(model.cond_neg),
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_document(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"unsupported model format {doc.get('format')!r}")
    kind = doc.get("kind")
    try:
        if kind == "mimtcnn":
            p = doc["proposals"]
            ps = ProposalSet(tuple(tuple(int(j) for j in prop) for prop in p["indices"]),
                             int(p["max_size"]), int(p["feature_count"]), int(p["seed"]))
            params = ModelParams(**{k: decode_matrix(doc["params"][k]) for k in PARAM_NAMES})
            return Model(params, ps, TrainConfig(**doc["config"]), list(doc["label_names"]),
                         list(doc["feature_names"]), [float(v) for v in doc["loss_history"]])
        if kind == "mlp":
            params = MlpParams(**{k: decode_matrix(v) for k, v in doc["params"].items()})
            return MlpModel(params, MlpConfig(**doc["config"]), list(doc["feature_names"]),
                            list(doc["label_names"]), [float(v) for v in doc["loss_history"]])
        if kind == "mlknn":
            return MlknnModel(
                features=decode_matrix(doc["train_features"]),
                labels=np.array(doc["train_labels"], dtype=np.uint8),
                k=int(doc["config"]["k"]), s=float(doc["config"]["s"]),
                prior_pos=np.array([float(v) for v in doc["prior_pos"]]),
                cond_pos=decode_matrix(doc["cond_pos"]),
                cond_neg=decode_matrix(doc["cond_neg"]),
                feature_names=list(doc["feature_names"]),
                label_names=list(doc["label_names"]),
            )
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"model document is missing or mistypes a field: {exc}") from exc
    raise DataFormatError(f"unknown model kind {kind!r}")


def dumps_model(model) -> str:
    return json.dumps(model_to_document(model), indent=1, sort_keys=True) + "\n"


def save_model(model, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not a JSON model document ({exc})") from exc
    return model_from_document(doc)
