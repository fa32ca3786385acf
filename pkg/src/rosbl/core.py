"""Shared domain types: block partitions, recovery problems, hyperparameters,
Gaussian posteriors, and fitted estimates.

All types validate their invariants at construction and are immutable
afterwards, so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "BlockStructure",
    "partition_uniform",
    "Problem",
    "Hyperparameters",
    "Posterior",
    "Estimate",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class BlockStructure:
    """Disjoint partition of the coefficient indices {0, ..., m-1} into groups.

    Groups may be supplied in any order and need not be contiguous; every
    index must belong to exactly one group and every group must be nonempty.
    Singleton groups (all sizes 1) reduce block sparsity to plain sparsity.
    """

    def __init__(self, groups: Sequence[Sequence[int]]):
        arrays = []
        for g_id, g in enumerate(groups):
            idx = np.asarray(g, dtype=np.int64)
            if idx.ndim != 1 or idx.size == 0:
                raise ValueError(f"group {g_id} must be a nonempty 1-D index list")
            if np.unique(idx).size != idx.size:
                raise ValueError(f"group {g_id} contains duplicate indices")
            arrays.append(idx)
        if not arrays:
            raise ValueError("at least one group is required")
        m = int(sum(g.size for g in arrays))
        index_of_group = np.full(m, -1, dtype=np.int64)
        for g_id, idx in enumerate(arrays):
            if idx.min() < 0 or idx.max() >= m:
                raise ValueError(f"group {g_id} has indices outside 0..{m - 1}")
            if (index_of_group[idx] != -1).any():
                raise ValueError(f"group {g_id} overlaps another group")
            index_of_group[idx] = g_id
        if (index_of_group == -1).any():
            missing = int(np.flatnonzero(index_of_group == -1)[0])
            raise ValueError(f"index {missing} is not covered by any group")
        self._groups = tuple(_readonly(g.copy()) for g in arrays)
        self._index_of_group = _readonly(index_of_group)
        self._m = m

    @property
    def m(self) -> int:
        """Total number of coefficient indices covered."""
        return self._m

    @property
    def num_groups(self) -> int:
        return len(self._groups)

    @property
    def groups(self) -> tuple:
        return self._groups

    @property
    def group_sizes(self) -> np.ndarray:
        return np.array([g.size for g in self._groups], dtype=np.int64)

    @property
    def index_of_group(self) -> np.ndarray:
        """Array of length m mapping each coefficient index to its group id."""
        return self._index_of_group

    def expand(self, per_group: np.ndarray) -> np.ndarray:
        """Broadcast one value per group out to one value per coefficient."""
        per_group = np.asarray(per_group, dtype=float)
        if per_group.shape != (self.num_groups,):
            raise ValueError(
                f"expected {self.num_groups} per-group values, got shape {per_group.shape}"
            )
        return per_group[self._index_of_group]

    def to_json_dict(self) -> dict:
        return {"groups": [g.tolist() for g in self._groups]}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "BlockStructure":
        """Accepts {"uniform": {"m": M, "block_len": B}} or {"groups": [[...], ...]}."""
        if not isinstance(obj, dict):
            raise ValueError("block structure JSON must be an object")
        if "uniform" in obj:
            spec = obj["uniform"]
            return partition_uniform(int(spec["m"]), int(spec["block_len"]))
        if "groups" in obj:
            return cls(obj["groups"])
        raise ValueError("block structure JSON needs a 'uniform' or 'groups' key")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockStructure):
            return NotImplemented
        return len(self._groups) == len(other._groups) and all(
            np.array_equal(a, b) for a, b in zip(self._groups, other._groups)
        )

    def __hash__(self):
        return hash((self._m, len(self._groups)))

    def __repr__(self) -> str:
        return f"BlockStructure(m={self._m}, num_groups={self.num_groups})"


def partition_uniform(m: int, block_len: int) -> BlockStructure:
    """Contiguous partition of {0, ..., m-1} into m / block_len equal groups.

    ``block_len`` must divide ``m``; block_len = 1 yields singleton groups.
    """
    m = int(m)
    block_len = int(block_len)
    if m < 1 or block_len < 1:
        raise ValueError("m and block_len must be positive")
    if m % block_len != 0:
        raise ValueError(f"block_len {block_len} does not divide m {m}")
    return BlockStructure(
        [np.arange(g * block_len, (g + 1) * block_len) for g in range(m // block_len)]
    )


def _as_matrix(name: str, a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return _readonly(arr.copy())


@dataclass(frozen=True, eq=False)
class Problem:
    """One recovery instance.

    Y : (n, L) measurement columns.
    A : (n, m) dictionary; its m columns are partitioned by ``blocks``.
    truth : optional (X, E) pair of the generating coefficients (m, L) and
        outliers (n, L), used only for scoring.
    """

    Y: np.ndarray
    A: np.ndarray
    blocks: BlockStructure
    truth: Optional[tuple] = None

    def __post_init__(self):
        Y = _as_matrix("Y", self.Y)
        A = _as_matrix("A", self.A)
        if Y.shape[0] != A.shape[0]:
            raise ValueError(
                f"row mismatch: Y has {Y.shape[0]} rows but A has {A.shape[0]}"
            )
        if A.shape[1] != self.blocks.m:
            raise ValueError(
                f"A has {A.shape[1]} columns but the block structure covers {self.blocks.m}"
            )
        if Y.shape[1] < 1:
            raise ValueError("Y must have at least one measurement column")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "A", A)
        if self.truth is not None:
            X, E = self.truth
            X = _as_matrix("truth X", X)
            E = _as_matrix("truth E", E)
            if X.shape != (A.shape[1], Y.shape[1]):
                raise ValueError(f"truth X shape {X.shape} != {(A.shape[1], Y.shape[1])}")
            if E.shape != Y.shape:
                raise ValueError(f"truth E shape {E.shape} != {Y.shape}")
            object.__setattr__(self, "truth", (X, E))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def L(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Variance hyperparameters of the hierarchical model.

    gamma : (G,) one signal variance per block.
    delta : (n, L) per-entry outlier variances, or None when the model has
        no outlier term.
    sigma2 : Gaussian noise variance, > 0.
    """

    gamma: np.ndarray
    delta: Optional[np.ndarray]
    sigma2: float

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim != 1 or np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
            raise ValueError("gamma must be a 1-D vector of nonnegative finite values")
        object.__setattr__(self, "gamma", _readonly(gamma.copy()))
        if self.delta is not None:
            delta = np.asarray(self.delta, dtype=float)
            if delta.ndim != 2 or np.any(delta < 0) or not np.all(np.isfinite(delta)):
                raise ValueError("delta must be an (n, L) matrix of nonnegative finite values")
            object.__setattr__(self, "delta", _readonly(delta.copy()))
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")
        object.__setattr__(self, "sigma2", float(self.sigma2))


@dataclass(frozen=True, eq=False)
class Posterior:
    """Per-measurement Gaussian posterior over the stacked coefficients.

    mu : (d, L), column i is the posterior mean for measurement i.
    sigma : (L, d, d), entry i is the posterior covariance for measurement i.
    d is m + n for the augmented model and m when outliers are disabled.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.ndim != 2:
            raise ValueError("mu must be (d, L)")
        d, L = mu.shape
        if sigma.shape != (L, d, d):
            raise ValueError(f"sigma shape {sigma.shape} inconsistent with mu {mu.shape}")
        object.__setattr__(self, "mu", _readonly(mu.copy()))
        object.__setattr__(self, "sigma", _readonly(sigma.copy()))

    @property
    def L(self) -> int:
        return self.mu.shape[1]


@dataclass(frozen=True, eq=False)
class Estimate:
    """Result of a solver run: MAP coefficients, fitted hyperparameters, and
    the per-iteration evidence trace."""

    X_hat: np.ndarray
    E_hat: np.ndarray
    hyper: Hyperparameters
    evidence_trace: np.ndarray
    iterations: int
    converged: bool
    posterior: Optional[Posterior] = None
