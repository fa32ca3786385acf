"""Convex baselines: group lasso solved by accelerated proximal gradient.

The objective per measurement column is

    f(x) = ||A x - y||_2^2 + lam * sum_g ||x_g||_2

minimized by FISTA with the exact proximal operator of the group penalty.
Singleton groups reduce the penalty to lam * ||x||_1, giving the plain l1
baseline.  Multiple measurement columns are solved independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .core import BlockStructure

__all__ = [
    "ProxConfig",
    "block_soft_threshold",
    "group_lasso",
    "mmv_columnwise",
    "group_lasso_objective",
]


@dataclass(frozen=True)
class ProxConfig:
    """Proximal-gradient knobs.  step="auto" uses 1 / (2 lambda_max(A^T A))
    with lambda_max estimated by power iteration."""

    lam: float = 0.0
    max_iters: int = 2000
    tol: float = 1e-8
    step: float | str = "auto"

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ValueError("lam must be >= 0")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if not (self.tol > 0):
            raise ValueError("tol must be > 0")
        if isinstance(self.step, str):
            if self.step != "auto":
                raise ValueError("step must be a positive number or 'auto'")
        else:
            if not (float(self.step) > 0):
                raise ValueError("step must be a positive number or 'auto'")
            object.__setattr__(self, "step", float(self.step))

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "step": self.step,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ProxConfig":
        if not isinstance(obj, dict):
            raise ValueError("prox config JSON must be an object")
        known = {"lambda", "max_iters", "tol", "step"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown prox config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "lambda" in kwargs:
            kwargs["lam"] = kwargs.pop("lambda")
        return cls(**kwargs)


def _group_norms(v: np.ndarray, blocks: BlockStructure) -> np.ndarray:
    sq = np.bincount(blocks.index_of_group, weights=v * v, minlength=blocks.num_groups)
    return np.sqrt(sq)


def block_soft_threshold(v, blocks: BlockStructure, tau: float) -> np.ndarray:
    """Proximal operator of tau * sum_g ||v_g||_2.

    Scales each group toward zero by max(0, 1 - tau / ||v_g||); a group with
    zero norm maps to zero.  With singleton groups this is scalar soft
    thresholding sign(v_j) * max(|v_j| - tau, 0).
    """
    v = np.asarray(v, dtype=float)
    if not (tau >= 0):
        raise ValueError("tau must be >= 0")
    norms = _group_norms(v, blocks)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.maximum(0.0, 1.0 - tau / norms)
    scale[norms == 0.0] = 0.0
    return v * scale[blocks.index_of_group]


def group_lasso_objective(A, y, x, blocks: BlockStructure, lam: float) -> float:
    r = A @ x - y
    return float(r @ r) + lam * float(np.sum(_group_norms(x, blocks)))


def _auto_step(A: np.ndarray, iters: int = 50, tol: float = 1e-6) -> float:
    """1 / (2 lambda_max(A^T A)) via power iteration on A^T A."""
    m = A.shape[1]
    v = np.full(m, 1.0 / math.sqrt(m))
    lam = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:
            return 1.0  # A == 0: the gradient vanishes, any step works
        v = w / lam_new
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return 1.0 / (2.0 * lam)


def group_lasso(A, y, blocks: BlockStructure, config: ProxConfig) -> np.ndarray:
    """Approximate minimizer of ||A x - y||^2 + lam * sum_g ||x_g||_2.

    FISTA from x = 0: gradient steps on the smooth term (gradient
    2 A^T (A x - y)), prox via block_soft_threshold with tau = lam * step.
    Stops when the relative objective change falls below config.tol or
    max_iters is reached; returns the best iterate seen.

    Raises ValueError when an explicit step makes the objective diverge
    persistently.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise ValueError(f"shape mismatch: A {A.shape}, y {y.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise ValueError("A and y must be finite")
    if A.shape[1] != blocks.m:
        raise ValueError(f"A has {A.shape[1]} columns but blocks cover {blocks.m}")
    # matvec sizes here are below the BLAS threading break-even
    with threadpool_limits(limits=1, user_api="blas"):
        return _fista(A, y, blocks, config)


def _fista(A, y, blocks: BlockStructure, config: ProxConfig) -> np.ndarray:
    step = _auto_step(A) if config.step == "auto" else float(config.step)
    explicit_step = config.step != "auto"
    tau = config.lam * step

    m = A.shape[1]
    x = np.zeros(m)
    z = x
    t_momentum = 1.0
    obj0 = group_lasso_objective(A, y, x, blocks, config.lam)
    best_x, best_obj = x, obj0
    obj_prev = obj0
    bad_streak = 0

    for _ in range(config.max_iters):
        grad = 2.0 * (A.T @ (A @ z - y))
        x_new = block_soft_threshold(z - step * grad, blocks, tau)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_momentum * t_momentum))
        z = x_new + ((t_momentum - 1.0) / t_new) * (x_new - x)
        x, t_momentum = x_new, t_new

        obj = group_lasso_objective(A, y, x, blocks, config.lam)
        if obj < best_obj:
            best_x, best_obj = x, obj
        if explicit_step:
            bad_streak = bad_streak + 1 if obj > obj_prev else 0
            if bad_streak >= 10 and obj > obj0:
                raise ValueError(
                    f"objective diverging with step {step:g}; "
                    "use a smaller explicit step or step='auto'"
                )
        if abs(obj - obj_prev) <= config.tol * max(abs(obj_prev), 1e-300):
            break
        obj_prev = obj
    return best_x.copy()


def mmv_columnwise(A, Y, blocks: BlockStructure, config: ProxConfig) -> np.ndarray:
    """Solve each measurement column independently; column i of the result
    equals group_lasso(A, Y[:, i], blocks, config)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError(f"Y must be 2-D, got shape {Y.shape}")
    columns = []
    for i in range(Y.shape[1]):
        try:
            columns.append(group_lasso(A, Y[:, i], blocks, config))
        except ValueError as exc:
            raise ValueError(f"column {i}: {exc}") from exc
    return np.stack(columns, axis=1)
