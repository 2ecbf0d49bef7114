"""Random region proposals: fixed feature-index subsets shared by all patients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass(frozen=True, eq=False)
class ProposalSet:
    proposals: tuple[tuple[int, ...], ...]
    max_size: int
    feature_count: int
    seed: int

    def __post_init__(self):
        if len(self.proposals) == 0:
            raise ParameterError("a ProposalSet needs at least one proposal")
        for r, prop in enumerate(self.proposals):
            if not 1 <= len(prop) <= self.max_size:
                raise ParameterError(f"proposal {r} has size {len(prop)}, max is {self.max_size}")
            if any(b <= a for a, b in zip(prop, prop[1:])):
                raise ParameterError(f"proposal {r} is not strictly increasing")
            if prop[0] < 0 or prop[-1] >= self.feature_count:
                raise ParameterError(f"proposal {r} indexes outside 0..{self.feature_count - 1}")

    def __len__(self):
        return len(self.proposals)

    def __eq__(self, other):
        if not isinstance(other, ProposalSet):
            return NotImplemented
        return (self.proposals, self.max_size, self.feature_count, self.seed) == (
            other.proposals, other.max_size, other.feature_count, other.seed)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(p) for p in self.proposals], dtype=np.int64)

    def index_matrix(self) -> np.ndarray:
        """R x S int64 matrix of feature indices, tail-padded with -1."""
        idx = np.full((len(self.proposals), self.max_size), -1, dtype=np.int64)
        for r, prop in enumerate(self.proposals):
            idx[r, :len(prop)] = prop
        return idx


def generate_proposals(d: int, R: int, S: int, seed: int) -> ProposalSet:
    if R < 1:
        raise ParameterError("generation times R must be >= 1")
    if not 1 <= S <= d:
        raise ParameterError(f"max size S must lie in 1..d (d={d}), got {S}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(R):
        size = int(rng.integers(1, S + 1))
        chosen = rng.choice(d, size=size, replace=False)
        out.append(tuple(int(j) for j in np.sort(chosen)))
    return ProposalSet(tuple(out), S, d, seed)


def extract_instances(ps: ProposalSet, x) -> np.ndarray:
    """Gather one patient's values into an R x S zero-padded instance matrix."""
    x = np.asarray(x)
    if x.shape != (ps.feature_count,):
        raise ShapeError(f"expected a length-{ps.feature_count} row, got shape {x.shape}")
    return gather_instances(ps.index_matrix(), x[None, :])[0]


def gather_instances(idx: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Batched gather: (m, d) rows through an R x S padded index matrix -> (m, R, S)."""
    X = np.asarray(X, dtype=np.float64)
    padded = np.concatenate([X, np.zeros((X.shape[0], 1))], axis=1)
    # -1 selects the appended zero column
    return padded[:, idx]
