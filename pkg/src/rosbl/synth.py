"""Synthetic benchmark problems: Gaussian dictionary with unit-norm columns,
jointly block-sparse coefficients, heavy-tailed (Cauchy) outliers, and noise
scaled to prescribed dB ratios.

All randomness flows through a counter-based Philox generator keyed by the
config seed, so generation is a pure function of the config.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import BlockStructure, Problem, partition_uniform
from .io import write_matrix_csv, write_text_atomic
from .solver import OutlierModel

__all__ = [
    "SynthConfig",
    "rng_from_seed",
    "sample_dictionary",
    "sample_block_sparse_X",
    "cauchy_from_uniform",
    "sample_cauchy",
    "scale_to_ratio",
    "generate",
    "dump_problem",
]

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    sgnr_db / sonr_db are signal-to-Gaussian-noise and signal-to-outlier
    ratios in dB, measured with Frobenius norms over the whole matrices;
    +inf disables the corresponding noise term.
    """

    n: int
    m: int
    block_len: int
    s: int
    L: int
    sgnr_db: float
    sonr_db: float
    outlier_mode: OutlierModel = OutlierModel.TIME_VARYING
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "m", "block_len", "L"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
            object.__setattr__(self, name, int(getattr(self, name)))
        if int(self.s) < 0:
            raise ValueError("s must be >= 0")
        object.__setattr__(self, "s", int(self.s))
        if self.m % self.block_len != 0:
            raise ValueError(f"block_len {self.block_len} does not divide m {self.m}")
        if self.s > self.m // self.block_len:
            raise ValueError(
                f"s={self.s} exceeds the number of blocks {self.m // self.block_len}"
            )
        if not isinstance(self.outlier_mode, OutlierModel):
            raise ValueError("outlier_mode must be an OutlierModel member")
        for name in ("sgnr_db", "sonr_db"):
            v = float(getattr(self, name))
            if math.isnan(v) or v == -math.inf:
                raise ValueError(f"{name} must be a real number or +inf")
            object.__setattr__(self, name, v)
        if not (0 <= int(self.seed) <= _U64_MAX):
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "block_len": self.block_len,
            "s": self.s,
            "L": self.L,
            "sgnr_db": self.sgnr_db,
            "sonr_db": self.sonr_db,
            "outlier_mode": self.outlier_mode.value,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SynthConfig":
        if not isinstance(obj, dict):
            raise ValueError("synth config JSON must be an object")
        known = {
            "n", "m", "block_len", "s", "L", "sgnr_db", "sonr_db",
            "outlier_mode", "seed",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "outlier_mode" in kwargs:
            kwargs["outlier_mode"] = OutlierModel.from_string(kwargs["outlier_mode"])
        return cls(**kwargs)


def rng_from_seed(seed: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def sample_dictionary(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """(n, m) matrix of i.i.d. standard normals with columns scaled to unit
    l2 norm.  Zero columns (probability zero) are defensively resampled."""
    A = rng.standard_normal((n, m))
    norms = np.linalg.norm(A, axis=0)
    while np.any(norms == 0.0):
        bad = np.flatnonzero(norms == 0.0)
        A[:, bad] = rng.standard_normal((n, bad.size))
        norms = np.linalg.norm(A, axis=0)
    return A / norms


def sample_block_sparse_X(blocks: BlockStructure, s: int, L: int,
                          rng: np.random.Generator):
    """Jointly block-sparse coefficients: s groups chosen uniformly without
    replacement, their rows filled with i.i.d. N(0, 1) across all L columns,
    every other row exactly zero.

    Returns (X, active_groups) with active_groups sorted.
    """
    if s > blocks.num_groups:
        raise ValueError(f"s={s} exceeds the number of groups {blocks.num_groups}")
    X = np.zeros((blocks.m, L))
    active = np.sort(rng.choice(blocks.num_groups, size=s, replace=False))
    for g in active:
        idx = blocks.groups[g]
        X[idx, :] = rng.standard_normal((idx.size, L))
    return X, tuple(int(g) for g in active)


def cauchy_from_uniform(u):
    """Map uniform(0, 1) draws to standard Cauchy via the inverse CDF
    tan(pi (u - 1/2))."""
    return np.tan(np.pi * (np.asarray(u, dtype=float) - 0.5))


def sample_cauchy(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """(rows, cols) i.i.d. standard Cauchy draws from a single uniform stream.

    u = 0 (which would map to the pole of tan) is resampled, keeping the
    sampler on the open interval (0, 1).
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    u = rng.random((rows, cols))
    while np.any(u == 0.0):
        bad = u == 0.0
        u[bad] = rng.random(int(bad.sum()))
    return cauchy_from_uniform(u)


def scale_to_ratio(signal, noise, target_db: float) -> np.ndarray:
    """Scale ``noise`` so that 10 log10(||signal||_F^2 / ||noise||_F^2)
    equals target_db.  target_db = +inf returns a zero matrix."""
    signal = np.asarray(signal, dtype=float)
    noise = np.asarray(noise, dtype=float)
    sig_norm = float(np.linalg.norm(signal))
    noise_norm = float(np.linalg.norm(noise))
    if sig_norm == 0.0:
        raise ValueError("signal has zero norm; the ratio is undefined")
    if noise_norm == 0.0:
        raise ValueError("noise has zero norm; it cannot be scaled to a ratio")
    c = sig_norm / (noise_norm * 10.0 ** (target_db / 20.0))
    return noise * c


def generate(config: SynthConfig) -> Problem:
    """Build one problem instance with ground truth attached.

    Y = A X + E + V where A is a normalized Gaussian dictionary, X is
    jointly block-sparse, V is Gaussian noise scaled to sgnr_db, and E is
    Cauchy outliers scaled to sonr_db (one column replicated across all
    measurements in stationary mode; absent when outlier_mode is NONE).
    """
    rng = rng_from_seed(config.seed)
    blocks = partition_uniform(config.m, config.block_len)
    A = sample_dictionary(config.n, config.m, rng)
    X, _ = sample_block_sparse_X(blocks, config.s, config.L, rng)
    V_raw = rng.standard_normal((config.n, config.L))
    mode = config.outlier_mode
    if mode is OutlierModel.NONE:
        E_raw = None
    elif mode is OutlierModel.STATIONARY:
        E_raw = np.repeat(sample_cauchy(config.n, 1, rng), config.L, axis=1)
    else:
        E_raw = sample_cauchy(config.n, config.L, rng)

    signal = A @ X
    V = scale_to_ratio(signal, V_raw, config.sgnr_db)
    if E_raw is None:
        E = np.zeros((config.n, config.L))
    else:
        E = scale_to_ratio(signal, E_raw, config.sonr_db)
    Y = signal + E + V
    return Problem(Y=Y, A=A, blocks=blocks, truth=(X, E))


def dump_problem(problem: Problem, config: SynthConfig, outdir) -> None:
    """Write A.csv, Y.csv, X.csv, E.csv, and config.json into ``outdir``."""
    if problem.truth is None:
        raise ValueError("problem has no ground truth to dump")
    os.makedirs(outdir, exist_ok=True)
    X, E = problem.truth
    write_matrix_csv(problem.A, os.path.join(outdir, "A.csv"))
    write_matrix_csv(problem.Y, os.path.join(outdir, "Y.csv"))
    write_matrix_csv(X, os.path.join(outdir, "X.csv"))
    write_matrix_csv(E, os.path.join(outdir, "E.csv"))
    write_text_atomic(
        os.path.join(outdir, "config.json"),
        json.dumps(config.to_json_dict(), indent=2) + "\n",
    )
