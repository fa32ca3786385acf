"""Command-line front end.

Subcommands:
    solve     fit one problem from CSV/JSON files
    bench     run a Monte-Carlo sweep from a bench spec
    classify  block-residual classification of test columns
    gen       dump a synthetic problem as CSV matrices

Matrix files are header-less CSV; row/column labels in output and error
messages are 0-based.  Exit codes: 0 success, 1 input error, 2 solver hit
max_iters without converging (outputs still written), 3 bench run with
less than 90% of trials succeeding.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .bench import BenchSpec, format_raw_csv, format_results_csv, run_sweep
from .classify import build_dictionary, class_residuals, classify, reconstruct
from .core import BlockStructure, Problem
from .io import read_matrix_csv, write_matrix_csv, write_text_atomic
from .solver import SolverConfig, fit
from .synth import SynthConfig, dump_problem, generate


class InputError(Exception):
    """User-facing input problem; maps to exit code 1."""


def _load_json(path, what: str) -> dict:
    try:
        with open(path, "r") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from exc


def _load_matrix(path, what: str) -> np.ndarray:
    try:
        return read_matrix_csv(path)
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def cmd_solve(args) -> int:
    A = _load_matrix(args.A, "dictionary")
    Y = _load_matrix(args.Y, "measurements")
    try:
        blocks = BlockStructure.from_json_dict(_load_json(args.blocks, "block structure"))
        config = SolverConfig.from_json_dict(_load_json(args.solver, "solver config"))
        problem = Problem(Y=Y, A=A, blocks=blocks)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from exc

    _say(args, f"solving: n={problem.n} m={problem.m} L={problem.L} "
               f"model={config.outlier_model.value}")
    est = fit(problem, config)

    os.makedirs(args.out, exist_ok=True)
    write_matrix_csv(est.X_hat, os.path.join(args.out, "X_hat.csv"))
    write_matrix_csv(est.E_hat, os.path.join(args.out, "E_hat.csv"))
    hyper = {
        "gamma": est.hyper.gamma.tolist(),
        "delta": None if est.hyper.delta is None else est.hyper.delta.tolist(),
        "sigma2": est.hyper.sigma2,
    }
    write_text_atomic(os.path.join(args.out, "hyper.json"), _json_text(hyper))
    evidence_lines = ["iteration,log_evidence"]
    evidence_lines += [
        f"{i},{v:.17g}" for i, v in enumerate(est.evidence_trace)
    ]
    write_text_atomic(
        os.path.join(args.out, "evidence.csv"), "\n".join(evidence_lines) + "\n"
    )
    _say(args, f"{'converged' if est.converged else 'NOT converged'} "
               f"after {est.iterations} iterations")
    return 0 if est.converged else 2


def cmd_bench(args) -> int:
    try:
        spec = BenchSpec.from_json_dict(_load_json(args.spec, "bench spec"))
        if args.seed is not None:
            spec = dataclasses.replace(spec, master_seed=args.seed)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from exc

    total = len(spec.s_values) * spec.trials
    _say(args, f"bench: {len(spec.algorithms)} algorithms x {total} trials "
               f"(seed {spec.master_seed}, jobs {args.jobs})")

    def progress(done, total_):
        if not args.quiet and (done % 25 == 0 or done == total_):
            print(f"  trial {done}/{total_}", file=sys.stderr)

    result = run_sweep(spec, jobs=args.jobs, progress=progress)

    os.makedirs(args.out, exist_ok=True)
    write_text_atomic(os.path.join(args.out, "results.csv"), format_results_csv(result))
    write_text_atomic(os.path.join(args.out, "raw.csv"), format_raw_csv(result))
    meta = {
        "spec": spec.to_json_dict(),
        "master_seed": spec.master_seed,
        "lambda_grid": list(spec.lambda_grid),
        "trials": spec.trials,
        "success_fraction": result.success_fraction,
        "lambda_tuning": "oracle (best error over the grid, scaled by max|A^T Y| per trial)",
        "versions": {
            "rosbl": __version__,
            "numpy": np.__version__,
        },
    }
    write_text_atomic(os.path.join(args.out, "meta.json"), _json_text(meta))
    _say(args, f"success fraction {result.success_fraction:.3f}")
    return 0 if result.success_fraction >= 0.9 else 3


def _read_labels(path, what: str) -> list:
    try:
        with open(path, "r") as fh:
            labels = [line.strip() for line in fh if line.strip() != ""]
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc
    if not labels:
        raise InputError(f"{what} {path} is empty")
    return labels


def cmd_classify(args) -> int:
    columns = _load_matrix(args.dict_cols, "dictionary columns")
    labels = _read_labels(args.labels, "labels file")
    tests = _load_matrix(args.tests, "test columns")
    try:
        config = SolverConfig.from_json_dict(_load_json(args.solver, "solver config"))
        cdict = build_dictionary(columns, labels)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from exc

    L = args.group_size
    if L < 1:
        raise InputError("group size must be >= 1")
    if tests.shape[0] != cdict.A.shape[0]:
        raise InputError(
            f"test columns have {tests.shape[0]} rows but the dictionary has "
            f"{cdict.A.shape[0]}"
        )
    if tests.shape[1] % L != 0:
        raise InputError(
            f"{tests.shape[1]} test columns are not divisible into groups of {L}"
        )
    n_groups = tests.shape[1] // L

    true_labels = None
    if args.test_labels is not None:
        true_labels = _read_labels(args.test_labels, "test labels file")
        if len(true_labels) == tests.shape[1]:
            true_labels = [true_labels[g * L] for g in range(n_groups)]
        elif len(true_labels) != n_groups:
            raise InputError(
                f"expected {n_groups} (per group) or {tests.shape[1]} (per column) "
                f"test labels, got {len(true_labels)}"
            )

    header = "sample_group,predicted,true," + ",".join(
        f"residual_{lab}" for lab in cdict.labels
    )
    report = [header]
    recon = np.empty_like(tests)
    for g in range(n_groups):
        Y = tests[:, g * L:(g + 1) * L]
        problem = Problem(Y=Y, A=cdict.A, blocks=cdict.blocks)
        est = fit(problem, config)
        residuals = class_residuals(cdict, Y, est.X_hat, est.E_hat)
        predicted = cdict.labels[int(np.argmin(residuals))]
        truth = true_labels[g] if true_labels is not None else ""
        report.append(
            f"{g},{predicted},{truth},"
            + ",".join(f"{r:.17g}" for r in residuals)
        )
        recon[:, g * L:(g + 1) * L] = reconstruct(cdict, est.X_hat)
        _say(args, f"group {g}: predicted {predicted}")

    os.makedirs(args.out, exist_ok=True)
    write_text_atomic(os.path.join(args.out, "report.csv"), "\n".join(report) + "\n")
    write_matrix_csv(recon, os.path.join(args.out, "reconstruction.csv"))
    return 0


def cmd_gen(args) -> int:
    try:
        config = SynthConfig.from_json_dict(_load_json(args.config, "synth config"))
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        problem = generate(config)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    os.makedirs(args.out, exist_ok=True)
    dump_problem(problem, config, args.out)
    _say(args, f"wrote problem (n={config.n}, m={config.m}, L={config.L}) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rosbl",
        description="Robust block-sparse Bayesian recovery: solve, benchmark, classify.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, jobs=False, seed=False):
        p.add_argument("--out", required=True, metavar="DIR", help="output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, metavar="N",
                           help="parallel worker processes (default 1)")
        if seed:
            p.add_argument("--seed", type=int, default=None, metavar="U64",
                           help="override the seed in the config file")

    p = sub.add_parser("solve", help="fit one problem from files")
    p.add_argument("A", help="dictionary CSV (n x m)")
    p.add_argument("Y", help="measurements CSV (n x L)")
    p.add_argument("blocks", help="block structure JSON (uniform or explicit groups)")
    p.add_argument("solver", help="solver config JSON")
    add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a Monte-Carlo sweep")
    p.add_argument("spec", help="bench spec JSON")
    add_common(p, jobs=True, seed=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("classify", help="classify grouped test columns")
    p.add_argument("dict_cols", help="dictionary columns CSV (n x m)")
    p.add_argument("labels", help="labels file, one class label per column")
    p.add_argument("tests", help="test columns CSV (n x T)")
    p.add_argument("group_size", type=int, help="measurements per test instance (L)")
    p.add_argument("solver", help="solver config JSON")
    p.add_argument("--test-labels", default=None,
                   help="optional true labels (one per group or per column)")
    add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gen", help="generate and dump a synthetic problem")
    p.add_argument("config", help="synth config JSON")
    add_common(p, seed=True)
    p.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
