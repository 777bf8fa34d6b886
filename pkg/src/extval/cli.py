"""Command-line entry point: ``extval {balance,estimate,diagnose,simulate,experiment}``.

Exit codes: 0 success, 1 usage or I/O error, 2 infeasible target.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import secrets
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .balancer import SolverConfig, Status, balance, feasibility_check
from .data import (
    DataError,
    TransformSpec,
    apply_transforms,
    load_sample_csv,
    load_stats_json,
    prune_low_variance_columns,
    stats_from_sample,
    write_sample_csv,
    write_stats_json,
)
from .experiment import DEFAULT_SIGMAS, DEFAULT_SIZES, format_table, run_grid
from .metrics import Metric, MetricError, bootstrap_ci, evaluate, ScoredSample
from .simulator import SemConfig, generate_experiment_triplet

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

logger = logging.getLogger("extval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(obj: dict, path: str | Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    if args.strict:
        raise UsageError("--seed is required in --strict mode")
    seed = secrets.randbits(63)
    logger.info("no --seed given; using %d", seed)
    return seed


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(lam=args.lam, min_weight=args.min_weight, sd_cutoff=args.sd_cutoff)


def _load_inputs(args: argparse.Namespace):
    sample = load_sample_csv(args.internal, args.outcome_column)
    target = load_stats_json(args.stats)
    TransformSpec(target.terms).validate_against(sample)
    return sample, target


def _input_digest(args: argparse.Namespace, sample, target, pruned) -> dict:
    return {
        "internalRows": sample.n,
        "internalSha256": _sha256(args.internal),
        "statsSha256": _sha256(args.stats),
        "externalRows": target.n_external,
        "specTerms": len(target.terms),
        "usedTerms": len(pruned.z.terms),
        "prunedTerms": [t.label for t in pruned.pruned],
    }


def _exit_for(solution) -> int:
    if solution.violations or solution.status is Status.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _solution_warning(solution) -> str | None:
    if solution.status is Status.EXACT:
        return solution.warning if solution.violations else None
    parts = [f"external statistics not matched exactly (residual {solution.residual_norm:.3g})"]
    if solution.violations:
        parts.append(f"{len(solution.violations)} term(s) outside the internal range")
    if solution.warning:
        parts.append(solution.warning)
    return "; ".join(parts)


def cmd_balance(args: argparse.Namespace) -> int:
    sample, target = _load_inputs(args)
    result = balance(sample, target, _solver_config(args))
    sol = result.solution
    if args.out_weights:
        with Path(args.out_weights).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rowIndex", "weight"])
            for i, w in enumerate(sol.weights):
                writer.writerow([i, repr(float(w))])
    report = {
        "toolVersion": __version__,
        "schemaVersion": SCHEMA_VERSION,
        **sol.report(),
        "warning": _solution_warning(sol),
        "inputs": _input_digest(args, sample, target, result.pruned),
    }
    _write_json(report, args.out_report)
    for v in sol.violations:
        print(f"violation: {v.term} target {v.target_value:.6g} outside [{v.internal_min:.6g}, {v.internal_max:.6g}]",
              file=sys.stderr)
    return _exit_for(sol)


def _read_scores(path: str | Path, n: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"rowIndex", "score"} <= set(reader.fieldnames):
            raise DataError(f"{path}: scores CSV needs columns rowIndex, score")
        index, scores = [], []
        for row_no, row in enumerate(reader, start=1):
            try:
                index.append(int(row["rowIndex"]))
                scores.append(float(row["score"]))
            except (TypeError, ValueError):
                raise DataError(f"{path}: malformed value at row {row_no}") from None
    if sorted(index) != list(range(n)):
        raise DataError(f"{path}: rowIndex must cover internal rows 0..{n - 1} exactly once ({len(index)} rows given)")
    out = np.empty(n)
    out[np.array(index)] = scores
    if not ((out >= 0) & (out <= 1)).all():
        raise DataError(f"{path}: scores must lie in [0, 1]")
    return out


def cmd_estimate(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    sample, target = _load_inputs(args)
    scores = _read_scores(args.scores, sample.n)
    metrics = [Metric(m.strip().lower()) for m in args.metrics.split(",") if m.strip()]
    if len(set(metrics)) != len(metrics):
        raise UsageError("duplicate metric in --metrics")
    cfg = _solver_config(args)
    result = balance(sample, target, cfg)
    sol = result.solution
    if args.bootstrap > 0:
        estimates = bootstrap_ci(sample, target, scores, metrics, args.bootstrap, seed, cfg, args.threads)
        metric_json = [e.to_json() for e in estimates]
    else:
        scored = ScoredSample(scores, sample.outcomes, sol.weights)
        metric_json = [
            {"metric": m.value, "value": evaluate(scored, m), "ciLower": None, "ciUpper": None,
             "bootstrapReplicates": 0, "failedReplicates": 0}
            for m in metrics
        ]
    solver = sol.report()
    solver.pop("dual")
    report = {
        "toolVersion": __version__,
        "schemaVersion": SCHEMA_VERSION,
        "seed": seed,
        "metrics": metric_json,
        "solver": solver,
        "warning": _solution_warning(sol),
        "inputs": {**_input_digest(args, sample, target, result.pruned), "scoresSha256": _sha256(args.scores)},
    }
    _write_json(report, args.out)
    return _exit_for(sol)


def cmd_diagnose(args: argparse.Namespace) -> int:
    sample, target = _load_inputs(args)
    z = apply_transforms(sample, TransformSpec(target.terms))
    violations = feasibility_check(z, target)
    lo, hi = z.z.min(axis=0), z.z.max(axis=0)
    mean = z.z.mean(axis=0)
    bad = {v.term_index for v in violations}
    rows = []
    width = max(len(t.label) for t in target.terms)
    print(f"{'term':<{width}}  {'min':>11}  {'mean':>11}  {'max':>11}  {'target':>11}  status")
    for j, term in enumerate(target.terms):
        status = "VIOLATION" if j in bad else "ok"
        print(f"{term.label:<{width}}  {lo[j]:>11.5g}  {mean[j]:>11.5g}  {hi[j]:>11.5g}  {target.values[j]:>11.5g}  {status}")
        rows.append({"term": term.label, "internalMin": float(lo[j]), "internalMean": float(mean[j]),
                     "internalMax": float(hi[j]), "targetValue": float(target.values[j]), "violation": j in bad})
    try:
        pruned = [t.label for t in prune_low_variance_columns(z, target, args.sd_cutoff).pruned]
    except DataError:
        pruned = [t.label for t in target.terms]
    report = {
        "toolVersion": __version__,
        "schemaVersion": SCHEMA_VERSION,
        "feasible": not violations,
        "violations": [v.to_json() for v in violations],
        "terms": rows,
        "lowVarianceTerms": pruned,
    }
    if args.json:
        _write_json(report, args.json)
    print(f"{len(violations)} violation(s)" + (": " + ", ".join(v.term for v in violations) if violations else ""))
    return EXIT_INFEASIBLE if violations else EXIT_OK


def _check_sigma(values) -> None:
    for s in values:
        if s < 0:
            raise UsageError(f"--sigma-xah must be nonnegative, got {s}")


def cmd_simulate(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    _check_sigma([args.sigma_xah])
    n_train = args.n_train or args.n
    n_test = args.n_test or args.n
    n_ext = args.n_external or args.n
    cfg = SemConfig(p=args.p, sigma_xah=args.sigma_xah, seed=seed, variance_reading=args.variance_reading)
    data = generate_experiment_triplet(cfg, n_train, n_test, n_ext)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sample_csv(data.internal_train, out / "internal_train.csv", args.outcome_column)
    write_sample_csv(data.internal_test, out / "internal_test.csv", args.outcome_column)
    write_sample_csv(data.external, out / "external.csv", args.outcome_column)
    _write_json({"seed": seed, "sigmaXAH": args.sigma_xah, **data.model.to_json()}, out / "model.json")
    spec = TransformSpec.class_moments(data.external.feature_names)
    write_stats_json(stats_from_sample(data.external, spec), out / "external_stats.json")
    print(f"wrote simulated data to {out}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    _check_sigma(args.sigma_xah)
    if args.reps < 1 or any(n < 2 for n in args.n):
        raise UsageError("--reps must be positive and every --n at least 2")
    summary = run_grid(args.sigma_xah, args.n, args.reps, seed, threads=args.threads, p=args.p,
                       solver=_solver_config(args))
    print(format_table(summary))
    report = {"toolVersion": __version__, "schemaVersion": SCHEMA_VERSION, "seed": seed, **summary.to_json()}
    if args.out:
        _write_json(report, args.out)
    if args.csv:
        summary.write_csv(args.csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="extval", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"extval {__version__} (report schema {SCHEMA_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--strict", action="store_true", help="require an explicit --seed wherever randomness is used")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def inputs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--internal", required=True, help="internal sample CSV")
        p.add_argument("--stats", required=True, help="external statistics JSON")
        p.add_argument("--outcome-column", default="y")
        p.add_argument("--sd-cutoff", type=float, default=1e-4)

    def solver(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lambda", dest="lam", type=float, default=1e-6, help="relaxation trade-off (default 1e-6)")
        p.add_argument("--min-weight", type=float, default=1e-6)

    p = sub.add_parser("balance", help="solve for weights reproducing external statistics")
    inputs(p)
    solver(p)
    p.add_argument("--out-weights", help="weights CSV (rowIndex, weight)")
    p.add_argument("--out-report", default="-", help="solution report JSON (default stdout)")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("estimate", help="estimate external performance with bootstrap intervals")
    inputs(p)
    solver(p)
    p.add_argument("--scores", required=True, help="scores CSV (rowIndex, score)")
    p.add_argument("--metrics", default="auc,logloss,brier")
    p.add_argument("--bootstrap", type=int, default=1000, help="replicates (0 disables intervals)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="-", help="estimation report JSON (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", help="report external targets outside the internal range")
    inputs(p)
    p.add_argument("--json", help="also write the diagnosis as JSON")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="generate internal/external samples from the simulation model")
    p.add_argument("--sigma-xah", type=float, default=0.0)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--n-external", type=int)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--variance-reading", action="store_true", help="read coefficient scales as variances")
    p.add_argument("--outcome-column", default="y")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run the synthetic study grid")
    p.add_argument("--sigma-xah", type=float, nargs="+", default=list(DEFAULT_SIGMAS))
    p.add_argument("--n", type=int, nargs="+", default=list(DEFAULT_SIZES))
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="report JSON")
    p.add_argument("--csv", help="long-format CSV of every repetition")
    p.add_argument("--sd-cutoff", type=float, default=1e-4)
    solver(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("extval: error: --threads must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (DataError, MetricError, UsageError, OSError, ValueError) as exc:
        print(f"extval: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
