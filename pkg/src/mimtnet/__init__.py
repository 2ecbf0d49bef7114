"""Multi-instance multi-task CNN for sparse binary multi-label data."""

from ._kernels import BACKEND
from .dataio import Dataset, SyntheticSpec, generate_synthetic, load_csv, save_csv
from .network import ForwardTrace, ModelParams, forward, key_proposals, mil_pool
from .sampler import ProposalSet, extract_instances, generate_proposals
from .training import Model, TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "SyntheticSpec", "generate_synthetic", "load_csv", "save_csv",
    "ForwardTrace", "ModelParams", "forward", "key_proposals", "mil_pool", "ProposalSet",
    "extract_instances", "generate_proposals", "Model", "TrainConfig", "predict", "train",
]
