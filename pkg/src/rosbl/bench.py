"""Monte-Carlo benchmark harness.

Sweeps the number of active blocks s over seeded trials, runs the requested
algorithms, scores each with the relative l2 error, and aggregates to CSV.
Trial (s, k) is seeded purely by (master_seed, s, k), so results do not
depend on execution order or parallelism.

Algorithms:
    rosbl  solver with time-varying outlier variances
    mbsbl  solver with outlier variances shared across measurements
    l1     column-wise l1 baseline, oracle-tuned lambda
    l2l1   column-wise group-lasso baseline, oracle-tuned lambda

The l1/l2l1 lambda is swept over ``lambda_grid * max|A^T Y|`` per trial and
the best (oracle) error is reported, a deliberately favorable treatment of
the deterministic baselines.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .baselines import ProxConfig, mmv_columnwise
from .classify import build_dictionary, classify
from .core import Problem, partition_uniform
from .solver import SIGMA2_FLOOR, OutlierModel, SolverConfig, fit
from .synth import (
    SynthConfig,
    generate,
    rng_from_seed,
    sample_cauchy,
    sample_dictionary,
    scale_to_ratio,
)

__all__ = [
    "ALGORITHMS",
    "DEFAULT_LAMBDA_GRID",
    "BenchSpec",
    "TrialRecord",
    "BenchResult",
    "relative_l2_error",
    "trial_seed",
    "run_trial",
    "run_sweep",
    "ClassifyExperimentConfig",
    "run_classification_experiment",
]

ALGORITHMS = ("rosbl", "mbsbl", "l1", "l2l1")
DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 0.3, 1.0)

RESULTS_HEADER = "algorithm,s,trials,mean_rel_err,median_rel_err,stderr,wall_ms,failures"
RAW_HEADER = "algorithm,s,trial,rel_err"


def relative_l2_error(X, X_hat) -> float:
    """(1/L) sum_i ||x_i - x^_i||^2 / ||x_i||^2 over the L columns.

    Undefined (raises) when any column of the reference X is zero.
    """
    X = np.asarray(X, dtype=float)
    X_hat = np.asarray(X_hat, dtype=float)
    if X.shape != X_hat.shape or X.ndim != 2:
        raise ValueError(f"shape mismatch: X {X.shape}, X_hat {X_hat.shape}")
    denom = np.sum(X * X, axis=0)
    if np.any(denom == 0.0):
        col = int(np.flatnonzero(denom == 0.0)[0])
        raise ValueError(f"column {col} of the reference X is zero; error undefined")
    num = np.sum((X - X_hat) ** 2, axis=0)
    return float(np.mean(num / denom))


def trial_seed(master_seed: int, s: int, trial: int) -> int:
    """Deterministic 64-bit seed derived only from (master_seed, s, trial)."""
    ss = np.random.SeedSequence([int(master_seed), int(s), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class BenchSpec:
    """One sweep: trials x s_values x algorithms on the synth template.

    The template's s and seed fields are overridden per trial; the solver's
    outlier_model is overridden per algorithm (rosbl/mbsbl).  With
    sigma2_from_truth the Bayesian solvers fix sigma2 to each trial's
    realized Gaussian noise variance instead of learning it.
    """

    synth: SynthConfig
    s_values: tuple = (1, 2, 3, 4, 5, 6)
    trials: int = 50
    algorithms: tuple = ALGORITHMS
    solver: SolverConfig = field(default_factory=SolverConfig)
    prox: ProxConfig = field(default_factory=ProxConfig)
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    sigma2_from_truth: bool = False
    master_seed: int = 0

    def __post_init__(self):
        s_values = tuple(int(s) for s in self.s_values)
        if not s_values:
            raise ValueError("s_values must be nonempty")
        object.__setattr__(self, "s_values", s_values)
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "trials", int(self.trials))
        algorithms = tuple(self.algorithms)
        unknown = set(algorithms) - set(ALGORITHMS)
        if not algorithms or unknown:
            raise ValueError(f"algorithms must be a nonempty subset of {ALGORITHMS}")
        object.__setattr__(self, "algorithms", algorithms)
        grid = tuple(float(g) for g in self.lambda_grid)
        if not grid or any(g <= 0 for g in grid):
            raise ValueError("lambda_grid must be nonempty and positive")
        object.__setattr__(self, "lambda_grid", grid)
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def to_json_dict(self) -> dict:
        return {
            "synth": self.synth.to_json_dict(),
            "s_values": list(self.s_values),
            "trials": self.trials,
            "algorithms": list(self.algorithms),
            "solver": self.solver.to_json_dict(),
            "prox": self.prox.to_json_dict(),
            "lambda_grid": list(self.lambda_grid),
            "sigma2_from_truth": self.sigma2_from_truth,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "BenchSpec":
        if not isinstance(obj, dict):
            raise ValueError("bench spec JSON must be an object")
        known = {
            "synth", "s_values", "trials", "algorithms", "solver", "prox",
            "lambda_grid", "sigma2_from_truth", "master_seed",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown bench spec keys: {sorted(unknown)}")
        if "synth" not in obj:
            raise ValueError("bench spec JSON requires a 'synth' section")
        kwargs = dict(obj)
        kwargs["synth"] = SynthConfig.from_json_dict(kwargs["synth"])
        if "solver" in kwargs:
            kwargs["solver"] = SolverConfig.from_json_dict(kwargs["solver"])
        if "prox" in kwargs:
            kwargs["prox"] = ProxConfig.from_json_dict(kwargs["prox"])
        for key in ("s_values", "algorithms", "lambda_grid"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class TrialRecord:
    algorithm: str
    s: int
    trial: int
    rel_err: float          # NaN when the algorithm failed
    wall_ms: float
    error: Optional[str] = None


def _oracle_lambda_error(A, Y, X_true, blocks, prox: ProxConfig, grid) -> float:
    """Best relative error over the lambda grid (scaled by max|A^T Y|)."""
    scale = float(np.max(np.abs(A.T @ Y)))
    best = np.inf
    for mult in grid:
        cfg = replace(prox, lam=mult * scale)
        X_hat = mmv_columnwise(A, Y, blocks, cfg)
        best = min(best, relative_l2_error(X_true, X_hat))
    return best


def true_noise_variance(problem: Problem) -> float:
    """Realized Gaussian noise variance ||Y - A X - E||_F^2 / (n L)."""
    X_true, E_true = problem.truth
    noise = problem.Y - problem.A @ X_true - E_true
    return max(float(np.sum(noise * noise)) / noise.size, SIGMA2_FLOOR)


def _bayes_config(spec: BenchSpec, problem: Problem, model: OutlierModel) -> SolverConfig:
    cfg = replace(spec.solver, outlier_model=model)
    if spec.sigma2_from_truth:
        cfg = replace(cfg, learn_sigma2=False, sigma2_init=true_noise_variance(problem))
    return cfg


def _solve_algorithm(algorithm: str, problem: Problem, spec: BenchSpec) -> float:
    X_true = problem.truth[0]
    if algorithm == "rosbl":
        cfg = _bayes_config(spec, problem, OutlierModel.TIME_VARYING)
        return relative_l2_error(X_true, fit(problem, cfg).X_hat)
    if algorithm == "mbsbl":
        cfg = _bayes_config(spec, problem, OutlierModel.STATIONARY)
        return relative_l2_error(X_true, fit(problem, cfg).X_hat)
    if algorithm == "l1":
        singles = partition_uniform(problem.m, 1)
        return _oracle_lambda_error(
            problem.A, problem.Y, X_true, singles, spec.prox, spec.lambda_grid
        )
    if algorithm == "l2l1":
        return _oracle_lambda_error(
            problem.A, problem.Y, X_true, problem.blocks, spec.prox, spec.lambda_grid
        )
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_trial(spec: BenchSpec, s: int, trial: int) -> list:
    """Generate the (s, trial) problem and score every requested algorithm.

    Per-algorithm failures are recorded (rel_err = NaN) without aborting
    the remaining algorithms.
    """
    cfg = replace(spec.synth, s=int(s), seed=trial_seed(spec.master_seed, s, trial))
    try:
        problem = generate(cfg)
    except Exception as exc:
        return [
            TrialRecord(a, int(s), int(trial), float("nan"), 0.0,
                        f"generation failed: {exc}")
            for a in spec.algorithms
        ]
    records = []
    for algorithm in spec.algorithms:
        start = time.perf_counter()
        try:
            err = _solve_algorithm(algorithm, problem, spec)
            message = None
        except Exception as exc:  # recorded, not raised: one bad trial must not kill the sweep
            err = float("nan")
            message = str(exc)
        wall_ms = (time.perf_counter() - start) * 1e3
        records.append(TrialRecord(algorithm, int(s), int(trial), err, wall_ms, message))
    return records


@dataclass
class BenchResult:
    """Aggregated sweep output.

    rows: one dict per (algorithm, s) cell with keys algorithm, s, trials,
    mean_rel_err, median_rel_err, stderr, wall_ms (total), failures.
    raw: every TrialRecord, sorted by (algorithm, s, trial).
    """

    rows: list
    raw: list

    def cell(self, algorithm: str, s: int) -> dict:
        for row in self.rows:
            if row["algorithm"] == algorithm and row["s"] == s:
                return row
        raise KeyError(f"no cell for ({algorithm}, {s})")

    def mean_errors(self, algorithm: str) -> dict:
        return {
            row["s"]: row["mean_rel_err"]
            for row in self.rows
            if row["algorithm"] == algorithm
        }

    @property
    def success_fraction(self) -> float:
        total = len(self.raw)
        good = sum(1 for r in self.raw if np.isfinite(r.rel_err))
        return good / total if total else 1.0


def _aggregate(records: list, spec: BenchSpec) -> BenchResult:
    raw = sorted(records, key=lambda r: (r.algorithm, r.s, r.trial))
    rows = []
    for algorithm in spec.algorithms:
        for s in spec.s_values:
            cell = [r for r in raw if r.algorithm == algorithm and r.s == s]
            errs = np.array([r.rel_err for r in cell])
            good = errs[np.isfinite(errs)]
            failures = int(errs.size - good.size)
            if good.size:
                mean = float(np.mean(good))
                median = float(np.median(good))
                stderr = (
                    float(np.std(good, ddof=1) / np.sqrt(good.size))
                    if good.size > 1 else float("nan")
                )
            else:
                mean = median = stderr = float("nan")
            rows.append({
                "algorithm": algorithm,
                "s": s,
                "trials": len(cell),
                "mean_rel_err": mean,
                "median_rel_err": median,
                "stderr": stderr,
                "wall_ms": float(sum(r.wall_ms for r in cell)),
                "failures": failures,
            })
    return BenchResult(rows=rows, raw=raw)


def _run_trial_args(args) -> list:
    spec, s, trial = args
    return run_trial(spec, s, trial)


def run_sweep(spec: BenchSpec, jobs: int = 1, progress=None) -> BenchResult:
    """Run trials x s_values x algorithms and aggregate.

    jobs > 1 distributes trials over processes; seeding per (s, trial)
    keeps the result identical to a sequential run.  ``progress`` is an
    optional callable invoked as progress(done, total).
    """
    tasks = [(spec, s, k) for s in spec.s_values for k in range(spec.trials)]
    records = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for done, recs in enumerate(pool.map(_run_trial_args, tasks), start=1):
                records.extend(recs)
                if progress:
                    progress(done, len(tasks))
    else:
        for done, task in enumerate(tasks, start=1):
            records.extend(_run_trial_args(task))
            if progress:
                progress(done, len(tasks))
    return _aggregate(records, spec)


def format_results_csv(result: BenchResult) -> str:
    lines = [RESULTS_HEADER]
    for row in result.rows:
        lines.append(
            f"{row['algorithm']},{row['s']},{row['trials']},"
            f"{row['mean_rel_err']:.17g},{row['median_rel_err']:.17g},"
            f"{row['stderr']:.17g},{row['wall_ms']:.3f},{row['failures']}"
        )
    return "\n".join(lines) + "\n"


def format_raw_csv(result: BenchResult) -> str:
    lines = [RAW_HEADER]
    for r in result.raw:
        lines.append(f"{r.algorithm},{r.s},{r.trial},{r.rel_err:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Synthetic classification experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifyExperimentConfig:
    """Multi-class classification benchmark on a synthetic class dictionary.

    One shared dictionary of ``num_classes`` blocks with ``class_size``
    unit-norm Gaussian columns each; every instance draws a class (cycled so
    classes stay balanced), class coefficients for L_max columns, Cauchy
    outliers and Gaussian noise, then classifies via the masked block
    residual.  ``cells`` lists the (algorithm, L, sonr_db) combinations to
    evaluate; L <= L_max instances are prefixes of the same draws so cells
    are paired across L and sonr.
    """

    n: int = 80
    num_classes: int = 10
    class_size: int = 8
    L_max: int = 5
    sgnr_db: float = 40.0
    instances: int = 100
    cells: tuple = (
        ("rosbl", 1, 5.0),
        ("rosbl", 5, 5.0),
        ("rosbl", 1, 0.0),
        ("rosbl", 5, 0.0),
        ("mbsbl", 5, 0.0),
    )
    solver: SolverConfig = field(default_factory=SolverConfig)
    sigma2_from_truth: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        for algorithm, L, _ in self.cells:
            if algorithm not in ("rosbl", "mbsbl"):
                raise ValueError(f"unsupported classification algorithm {algorithm!r}")
            if not (1 <= int(L) <= self.L_max):
                raise ValueError(f"cell L={L} outside 1..{self.L_max}")


def run_classification_experiment(cfg: ClassifyExperimentConfig) -> list:
    """Returns one dict per cell: algorithm, L, sonr_db, accuracy, instances."""
    m = cfg.num_classes * cfg.class_size
    dict_rng = rng_from_seed(trial_seed(cfg.master_seed, 0, 0))
    columns = sample_dictionary(cfg.n, m, dict_rng)
    labels = [c for c in range(cfg.num_classes) for _ in range(cfg.class_size)]
    cdict = build_dictionary(columns, labels)

    correct = {cell: 0 for cell in cfg.cells}
    sonr_values = sorted({cell[2] for cell in cfg.cells})
    for i in range(cfg.instances):
        true_class = i % cfg.num_classes
        rng = rng_from_seed(trial_seed(cfg.master_seed, 1, i))
        coeff = rng.standard_normal((cfg.class_size, cfg.L_max))
        E_raw = sample_cauchy(cfg.n, cfg.L_max, rng)
        V_raw = rng.standard_normal((cfg.n, cfg.L_max))

        X_full = np.zeros((m, cfg.L_max))
        X_full[cdict.blocks.groups[true_class], :] = coeff
        signal = cdict.A @ X_full
        V = scale_to_ratio(signal, V_raw, cfg.sgnr_db)
        for sonr_db in sonr_values:
            E = scale_to_ratio(signal, E_raw, sonr_db)
            Y_full = signal + E + V
            cells_here = [c for c in cfg.cells if c[2] == sonr_db]
            for algorithm, L, _ in cells_here:
                Y = Y_full[:, :L]
                model = (
                    OutlierModel.TIME_VARYING if algorithm == "rosbl"
                    else OutlierModel.STATIONARY
                )
                solver_cfg = replace(cfg.solver, outlier_model=model)
                if cfg.sigma2_from_truth:
                    s2 = max(float(np.sum(V[:, :L] ** 2)) / (cfg.n * L), SIGMA2_FLOOR)
                    solver_cfg = replace(solver_cfg, learn_sigma2=False, sigma2_init=s2)
                problem = Problem(Y=Y, A=cdict.A, blocks=cdict.blocks)
                est = fit(problem, solver_cfg)
                predicted = classify(cdict, Y, est.X_hat, est.E_hat)
                if predicted == true_class:
                    correct[(algorithm, L, sonr_db)] += 1

    return [
        {
            "algorithm": algorithm,
            "L": L,
            "sonr_db": sonr_db,
            "accuracy": correct[(algorithm, L, sonr_db)] / cfg.instances,
            "instances": cfg.instances,
        }
        for (algorithm, L, sonr_db) in cfg.cells
    ]
