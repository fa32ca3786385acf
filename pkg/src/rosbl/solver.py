"""EM inference for robust block-sparse recovery on the augmented dictionary.

Per measurement column the generative model is

    y_i = A x_i + e_i + v_i,    v_i ~ N(0, sigma2 I_n),

with jointly block-sparse coefficients (rows of X inside block g share one
prior variance gamma_g) and a per-entry Gaussian scale-mixture prior on the
outliers e_ji with variances delta_ji.  Stacking x~_i = [x_i; e_i] against
the augmented dictionary A~ = [A | I_n] turns this into Bayesian linear
regression with a diagonal prior, fitted by evidence maximization: the
E-step computes each column's Gaussian posterior, the M-step re-estimates
(gamma, delta, sigma2) in closed form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from threadpoolctl import threadpool_limits

from .core import BlockStructure, Estimate, Hyperparameters, Posterior, Problem

__all__ = [
    "OutlierModel",
    "SolverConfig",
    "SIGMA2_FLOOR",
    "augment",
    "e_step",
    "m_step",
    "log_evidence",
    "fit",
    "extract_estimate",
]

SIGMA2_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


class OutlierModel(enum.Enum):
    """How outlier variances are tied across the L measurement columns."""

    TIME_VARYING = "time_varying"  # one free delta_ji per entry and column
    STATIONARY = "stationary"      # delta shared across columns (row-sparse outliers)
    NONE = "none"                  # no outlier term; plain block-sparse MMV

    @classmethod
    def from_string(cls, name: str) -> "OutlierModel":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(
            f"unknown outlier model {name!r}; expected one of "
            f"{[m.value for m in cls]}"
        )


@dataclass(frozen=True)
class SolverConfig:
    """Inference knobs.  The solver is deterministic: no field involves RNG.

    sigma2_init may be a positive number or "auto", which starts from
    max(1e-2 * ||Y||_F^2 / (n L), 1e-6).
    """

    outlier_model: OutlierModel = OutlierModel.TIME_VARYING
    max_iters: int = 500
    tol: float = 1e-4
    learn_sigma2: bool = True
    sigma2_init: float | str = "auto"
    gamma_floor: float = 1e-10

    def __post_init__(self):
        if not isinstance(self.outlier_model, OutlierModel):
            raise ValueError("outlier_model must be an OutlierModel member")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if not (self.tol > 0):
            raise ValueError("tol must be > 0")
        if not (self.gamma_floor > 0):
            raise ValueError("gamma_floor must be > 0")
        if isinstance(self.sigma2_init, str):
            if self.sigma2_init != "auto":
                raise ValueError("sigma2_init must be a positive number or 'auto'")
        else:
            if not (float(self.sigma2_init) > 0):
                raise ValueError("sigma2_init must be a positive number or 'auto'")
            object.__setattr__(self, "sigma2_init", float(self.sigma2_init))

    def to_json_dict(self) -> dict:
        return {
            "outlier_model": self.outlier_model.value,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "learn_sigma2": self.learn_sigma2,
            "sigma2_init": self.sigma2_init,
            "gamma_floor": self.gamma_floor,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SolverConfig":
        if not isinstance(obj, dict):
            raise ValueError("solver config JSON must be an object")
        known = {
            "outlier_model", "max_iters", "tol", "learn_sigma2",
            "sigma2_init", "gamma_floor",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "outlier_model" in kwargs:
            kwargs["outlier_model"] = OutlierModel.from_string(kwargs["outlier_model"])
        return cls(**kwargs)


def _check_finite(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def augment(A) -> np.ndarray:
    """Concatenate the identity to the dictionary: A~ = [A | I_n]."""
    A = _check_finite("A", A)
    if A.ndim != 2:
        raise ValueError(f"A must be 2-D, got shape {A.shape}")
    return np.concatenate([A, np.eye(A.shape[0])], axis=1)


def _prior_diag(gamma_tilde, delta) -> np.ndarray:
    if delta is None:
        return gamma_tilde
    return np.concatenate([gamma_tilde, delta])


def e_step(A_tilde, y, gamma_tilde, delta, sigma2):
    """Gaussian posterior for one measurement column.

    Parameters
    ----------
    A_tilde : (n, d) dictionary, augmented ([A | I_n]) or plain.
    y : (n,) measurement column.
    gamma_tilde : (m,) per-coefficient signal prior variances (block variances
        already broadcast to coefficients).
    delta : (n,) outlier prior variances, or None when A_tilde carries no
        outlier columns (then d == m).
    sigma2 : Gaussian noise variance, > 0.

    Returns
    -------
    mu : (d,) posterior mean.
    Sigma : (d, d) posterior covariance.

    Notes
    -----
    With P = diag([gamma_tilde; delta]) and B = sigma2 I_n + A~ P A~^T,

        mu    = P A~^T B^{-1} y
        Sigma = P  - P A~^T B^{-1} A~ P.

    B is n x n and positive definite for any sigma2 > 0, so the solve stays
    well posed even when some prior variances are exactly zero.
    """
    A_tilde = _check_finite("A_tilde", A_tilde)
    y = _check_finite("y", y)
    gamma_tilde = _check_finite("gamma_tilde", gamma_tilde)
    if delta is not None:
        delta = _check_finite("delta", delta)
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValueError(f"sigma2 must be positive and finite, got {sigma2}")
    n, d = A_tilde.shape
    prior = _prior_diag(gamma_tilde, delta)
    if prior.shape != (d,):
        raise ValueError(
            f"prior variances cover {prior.shape[0]} coefficients but A_tilde has {d} columns"
        )
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if np.any(prior < 0):
        raise ValueError("prior variances must be nonnegative")

    G = prior[:, None] * A_tilde.T          # P A~^T, (d, n)
    B = A_tilde @ G
    B[np.diag_indices(n)] += sigma2
    cho = cho_factor(B, lower=True, check_finite=False)
    mu = G @ cho_solve(cho, y, check_finite=False)
    Sigma = np.diag(prior) - G @ cho_solve(cho, G.T, check_finite=False)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return mu, Sigma


def _update_hyperparameters(second_moment, sigma2_numerator, blocks, config,
                            n, L, sigma2_old):
    """Closed-form M-step from per-column posterior second moments.

    second_moment : (d, L) with column i holding diag(Sigma^i) + (mu^i)^2.
    sigma2_numerator : sum_i ||y_i - A~ mu^i||^2 + tr(A~^T A~ Sigma^i),
        ignored unless config.learn_sigma2.
    """
    m = blocks.m
    sums = np.bincount(
        blocks.index_of_group,
        weights=second_moment[:m].sum(axis=1),
        minlength=blocks.num_groups,
    )
    gamma = np.maximum(sums / (blocks.group_sizes * L), config.gamma_floor)

    mode = config.outlier_model
    if mode is OutlierModel.NONE:
        delta = None
    elif mode is OutlierModel.TIME_VARYING:
        delta = np.maximum(second_moment[m:], config.gamma_floor)
    else:
        shared = second_moment[m:].mean(axis=1, keepdims=True)
        delta = np.maximum(np.repeat(shared, L, axis=1), config.gamma_floor)

    if config.learn_sigma2:
        sigma2 = max(sigma2_numerator / (L * n), SIGMA2_FLOOR)
    else:
        sigma2 = sigma2_old
    return gamma, delta, sigma2


def m_step(posterior, blocks, Y, A_tilde, config, sigma2):
    """Update (gamma, delta, sigma2) from the per-column posteriors.

    gamma_g  <-  sum_i sum_{j in group g} (Sigma^i_jj + (mu^i_j)^2) / (|g| L)
    delta_ji <-  Sigma^i_kk + (mu^i_k)^2 at the outlier coordinate k = m + j,
                 averaged over i and broadcast when the model is stationary.
    sigma2   <-  sum_i (||y_i - A~ mu^i||^2 + tr(A~^T A~ Sigma^i)) / (L n)
                 when config.learn_sigma2, otherwise the supplied value.

    gamma and delta are floored at config.gamma_floor, sigma2 at SIGMA2_FLOOR.
    """
    Y = np.asarray(Y, dtype=float)
    A_tilde = np.asarray(A_tilde, dtype=float)
    n, L = Y.shape
    d = posterior.mu.shape[0]
    if posterior.L != L:
        raise ValueError(f"posterior has {posterior.L} columns but Y has {L}")
    if A_tilde.shape != (n, d):
        raise ValueError(f"A_tilde shape {A_tilde.shape} inconsistent with posterior ({n}, {d})")

    mu = posterior.mu
    second_moment = np.empty((d, L))
    sigma2_numerator = 0.0
    for i in range(L):
        Sig = posterior.sigma[i]
        second_moment[:, i] = np.diag(Sig) + mu[:, i] ** 2
        if config.learn_sigma2:
            r = Y[:, i] - A_tilde @ mu[:, i]
            sigma2_numerator += float(r @ r) + float(np.sum((A_tilde @ Sig) * A_tilde))

    gamma, delta, sigma2_new = _update_hyperparameters(
        second_moment, sigma2_numerator, blocks, config, n, L, sigma2
    )
    return Hyperparameters(gamma=gamma, delta=delta, sigma2=sigma2_new)


def log_evidence(A_tilde, Y, hyper, blocks) -> float:
    """Total log marginal likelihood sum_i log N(y_i; 0, C_i) with
    C_i = sigma2 I_n + A~ diag([gamma~; delta_i]) A~^T."""
    A_tilde = _check_finite("A_tilde", A_tilde)
    Y = _check_finite("Y", Y)
    n, L = Y.shape
    gamma_tilde = blocks.expand(hyper.gamma)
    total = 0.0
    for i in range(L):
        prior = _prior_diag(gamma_tilde, None if hyper.delta is None else hyper.delta[:, i])
        C = (A_tilde * prior) @ A_tilde.T
        C[np.diag_indices(n)] += hyper.sigma2
        cho = cho_factor(C, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        quad = float(Y[:, i] @ cho_solve(cho, Y[:, i]))
        total += -0.5 * (n * _LOG_2PI + logdet + quad)
    return total


def extract_estimate(posterior, m: int, n: int):
    """Split posterior means into the coefficient part X_hat (m, L) and the
    outlier part E_hat (n, L).  A posterior without outlier coordinates
    (d == m) yields E_hat = 0."""
    mu = posterior.mu
    d, L = mu.shape
    if d == m + n:
        return mu[:m].copy(), mu[m:].copy()
    if d == m:
        return mu.copy(), np.zeros((n, L))
    raise ValueError(f"posterior dimension {d} matches neither m={m} nor m+n={m + n}")


# ---------------------------------------------------------------------------
# Fast per-iteration statistics (covariances never materialized)
# ---------------------------------------------------------------------------

@dataclass
class _EStats:
    mu: np.ndarray              # (d, L) posterior means
    second_moment: np.ndarray   # (d, L) diag(Sigma^i) + (mu^i)^2
    sigma2_numerator: float     # sum_i ||y_i - A~ mu^i||^2 + tr(A~^T A~ Sigma^i)
    loglik: float               # evidence at the hyperparameters used


class _TVWorkspace:
    """Per-fit constant buffers for the time-varying path: the stacked
    solve right-hand side [y_i | A | I_n] and the B buffer."""

    def __init__(self, A: np.ndarray, Y: np.ndarray):
        n, m = A.shape
        L = Y.shape[1]
        rhs = np.empty((L, n, 1 + m + n))
        rhs[:, :, 0] = Y.T
        rhs[:, :, 1:1 + m] = A
        rhs[:, :, 1 + m:] = np.eye(n)
        self.rhs = rhs
        self.B = np.empty((L, n, n))


def _stats_shared_cov(A, Y, gamma_tilde, delta_col, sigma2, need_noise) -> _EStats:
    """Statistics when all columns share one covariance (stationary or
    outlier-free model).  delta_col is (n,) or None.

    Uses B = sigma2 I + A diag(gamma~) A^T + diag(delta) and the identities
    y - A~ mu = sigma2 B^{-1} y and tr(A~^T A~ Sigma) = sigma2 (n - sigma2 tr(B^{-1})).
    """
    n, m = A.shape
    L = Y.shape[1]
    B = (A * gamma_tilde) @ A.T
    diag = np.diag_indices(n)
    B[diag] += sigma2 if delta_col is None else delta_col + sigma2
    cho = cho_factor(B, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))

    want_binv = delta_col is not None or need_noise
    rhs = [Y, A] + ([np.eye(n)] if want_binv else [])
    sol = cho_solve(cho, np.concatenate(rhs, axis=1), check_finite=False)
    Z = sol[:, :L]                             # column i = B^{-1} y_i
    W = sol[:, L:L + m]
    Binv = sol[:, L + m:] if want_binv else None

    quad_sq = np.einsum("ij,ij->j", A, W)      # a_j^T B^{-1} a_j
    mu_x = gamma_tilde[:, None] * (A.T @ Z)
    var_x = gamma_tilde - gamma_tilde**2 * quad_sq

    btr = float(np.trace(Binv)) if Binv is not None else 0.0
    if delta_col is not None:
        mu_e = delta_col[:, None] * Z
        var_e = delta_col - delta_col**2 * np.diag(Binv)
        mu = np.concatenate([mu_x, mu_e], axis=0)
        var = np.concatenate([var_x, var_e])
    else:
        mu = mu_x
        var = var_x

    second_moment = var[:, None] + mu**2
    quad_total = float(np.einsum("ij,ij->", Y, Z))
    loglik = -0.5 * (L * (n * _LOG_2PI + logdet) + quad_total)
    sigma2_numerator = 0.0
    if need_noise:
        sigma2_numerator = sigma2**2 * float(np.sum(Z * Z)) + L * sigma2 * (n - sigma2 * btr)
    return _EStats(mu, second_moment, sigma2_numerator, loglik)


def _stats_time_varying(A, Y, gamma_tilde, delta, sigma2, ws=None) -> _EStats:
    """Statistics with a distinct covariance per column (delta is (n, L)).

    Batched over columns: B_i = sigma2 I + A diag(gamma~) A^T + diag(delta_i);
    one stacked solve against [y_i | A | I_n] yields B^{-1} y_i, B^{-1} A
    (for the per-coefficient quadratics a_j^T B^{-1} a_j), and B^{-1} itself
    (for the outlier-coordinate variances and traces).
    """
    n, m = A.shape
    L = Y.shape[1]
    if ws is None:
        ws = _TVWorkspace(A, Y)
    M = (A * gamma_tilde) @ A.T
    B = ws.B
    B[:] = M
    idx = np.arange(n)
    B[:, idx, idx] += (delta + sigma2).T

    cho = np.linalg.cholesky(B)                       # raises LinAlgError if not PD
    logdets = 2.0 * np.sum(np.log(np.diagonal(cho, axis1=1, axis2=2)), axis=1)
    sol = np.linalg.solve(B, ws.rhs)                  # (L, n, 1 + m + n)
    Z = sol[:, :, 0]                                  # (L, n), row i = B_i^{-1} y_i
    W = sol[:, :, 1:1 + m]                            # (L, n, m)
    Binv = sol[:, :, 1 + m:]                          # (L, n, n)

    quad_sq = np.einsum("ij,lij->lj", A, W)           # (L, m): a_j^T B_i^{-1} a_j
    mu_x = gamma_tilde[None, :] * (Z @ A)             # (L, m)
    mu_e = delta.T * Z                                # (L, n)
    var_x = gamma_tilde[None, :] - gamma_tilde[None, :] ** 2 * quad_sq
    bdiag = np.diagonal(Binv, axis1=1, axis2=2)       # (L, n)
    var_e = delta.T - delta.T**2 * bdiag

    mu = np.concatenate([mu_x, mu_e], axis=1).T       # (d, L)
    var = np.concatenate([var_x, var_e], axis=1).T
    second_moment = var + mu**2

    quad_total = float(np.sum(Y.T * Z))
    loglik = -0.5 * (L * n * _LOG_2PI + float(np.sum(logdets)) + quad_total)
    btr = bdiag.sum(axis=1)                           # (L,) traces of B_i^{-1}
    sigma2_numerator = sigma2**2 * float(np.sum(Z * Z)) + sigma2 * float(
        np.sum(n - sigma2 * btr)
    )
    return _EStats(mu, second_moment, sigma2_numerator, loglik)


def _estep_stats(A, Y, blocks, gamma, delta, sigma2, mode, need_noise, ws=None) -> _EStats:
    gamma_tilde = blocks.expand(gamma)
    if mode is OutlierModel.TIME_VARYING:
        return _stats_time_varying(A, Y, gamma_tilde, delta, sigma2, ws)
    delta_col = None if delta is None else delta[:, 0]
    return _stats_shared_cov(A, Y, gamma_tilde, delta_col, sigma2, need_noise)


def _initial_sigma2(config: SolverConfig, Y: np.ndarray) -> float:
    if config.sigma2_init == "auto":
        n, L = Y.shape
        return max(1e-2 * float(np.sum(Y * Y)) / (n * L), 1e-6)
    return float(config.sigma2_init)


def _family_rel(old: np.ndarray, new: np.ndarray) -> float:
    return float(np.max(np.abs(new - old)) / max(float(np.max(np.abs(old))), 1e-300))


def fit(problem: Problem, config: SolverConfig) -> Estimate:
    """Run EM to convergence and return the recovered estimate.

    Alternates the per-column posterior computation with the closed-form
    hyperparameter updates until the relative change of every hyperparameter
    family — gamma, delta, and sigma2 when learned, each measured in the
    max norm against the family's largest previous value — drops below
    config.tol, or config.max_iters is reached.  The total log evidence is
    recorded after every update; the returned coefficients are the posterior
    means under the final hyperparameters (the Gaussian MAP estimate).

    Deterministic: identical inputs produce identical outputs.
    """
    # Single-threaded BLAS: the n x n factor/solve sizes here are far below
    # the threading break-even and multi-threaded kernels are slower.
    with threadpool_limits(limits=1, user_api="blas"):
        return _fit_loop(problem, config)


def _fit_loop(problem: Problem, config: SolverConfig) -> Estimate:
    A, Y, blocks = problem.A, problem.Y, problem.blocks
    n, L = Y.shape
    m = A.shape[1]
    mode = config.outlier_model

    gamma = np.ones(blocks.num_groups)
    delta = None if mode is OutlierModel.NONE else np.ones((n, L))
    sigma2 = _initial_sigma2(config, Y)
    need_noise = config.learn_sigma2
    ws = _TVWorkspace(A, Y) if mode is OutlierModel.TIME_VARYING else None

    def stats_at(gamma, delta, sigma2, t):
        try:
            return _estep_stats(A, Y, blocks, gamma, delta, sigma2, mode, need_noise, ws)
        except LinAlgError as exc:
            raise ValueError(f"posterior solve failed at iteration {t}: {exc}") from exc

    stats = stats_at(gamma, delta, sigma2, 0)
    trace = []
    converged = False
    iterations = 0
    for t in range(1, config.max_iters + 1):
        iterations = t
        gamma_new, delta_new, sigma2_new = _update_hyperparameters(
            stats.second_moment, stats.sigma2_numerator, blocks, config, n, L, sigma2
        )
        rel_change = _family_rel(gamma, gamma_new)
        if delta is not None:
            rel_change = max(rel_change, _family_rel(delta, delta_new))
        if config.learn_sigma2:
            rel_change = max(rel_change, abs(sigma2_new - sigma2) / max(sigma2, 1e-300))
        gamma, delta, sigma2 = gamma_new, delta_new, sigma2_new

        stats = stats_at(gamma, delta, sigma2, t)
        trace.append(stats.loglik)
        finite = (
            np.isfinite(stats.loglik)
            and np.all(np.isfinite(gamma))
            and (delta is None or np.all(np.isfinite(delta)))
            and np.isfinite(sigma2)
        )
        if not finite:
            raise ValueError(f"non-finite values encountered at iteration {t}")
        if rel_change < config.tol:
            converged = True
            break

    A_solve = A if mode is OutlierModel.NONE else augment(A)
    gamma_tilde = blocks.expand(gamma)
    d = A_solve.shape[1]
    mu = np.empty((d, L))
    sigma = np.empty((L, d, d))
    for i in range(L):
        mu[:, i], sigma[i] = e_step(
            A_solve, Y[:, i], gamma_tilde,
            None if delta is None else delta[:, i], sigma2,
        )
    posterior = Posterior(mu=mu, sigma=sigma)
    X_hat, E_hat = extract_estimate(posterior, m, n)
    hyper = Hyperparameters(gamma=gamma, delta=delta, sigma2=sigma2)
    return Estimate(
        X_hat=X_hat,
        E_hat=E_hat,
        hyper=hyper,
        evidence_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        posterior=posterior,
    )
