"""Command-line front end.

Subcommands: ``audit``, ``simulate``, ``verify``, ``demo-tables``.

Exit codes: 0 ok, 1 usage or I/O error, 2 validation error, 3 rates
unidentifiable in every cell, 4 a theorem check failed.  Every error path
writes one line ``error[<kind>]: <detail>`` to stderr.
"""

import argparse
import io
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .core import (
    DatasetValidationError,
    PrincipalStratum,
    Schema,
    example_potential_table,
    marginalize,
    read_csv,
    validate_dataset,
    write_csv,
)
from .identify import PrincipalFairnessEstimator, bootstrap, cell_label
from .metrics import CRITERIA, evaluate_all, evaluate_conditional, pf_disparity, principal_rates
from .regression import SeparationError
from .simulate import THEOREM_CHECKS, SpecValidationError, load_spec, run_suite, sample

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_UNIDENTIFIABLE = 3
EXIT_THEOREM = 4

DEFAULT_EPSILON = 0.05
FLOAT_DIGITS = 12


class CliError(Exception):
    def __init__(self, kind, detail, code):
        super().__init__(detail)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", EXIT_USAGE)


def _normalize(obj):
    """Round floats to 12 significant digits and make the tree JSON-safe."""
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.{FLOAT_DIGITS}g}")
    return obj


def dumps_report(report) -> str:
    return json.dumps(_normalize(report), sort_keys=True, indent=2) + "\n"


def _emit(text, output):
    if output in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError("io", f"cannot write {output}: {exc.strerror}", EXIT_USAGE) from None


def _split(text):
    return tuple(c.strip() for c in text.split(",") if c.strip()) if text else ()


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def build_audit_report(args) -> dict:
    try:
        header, rows = read_csv(args.input)
    except OSError as exc:
        raise CliError("io", f"cannot read {args.input}: {exc.strerror}", EXIT_USAGE) from None
    except DatasetValidationError as exc:
        raise CliError("validation", str(exc), EXIT_VALIDATION) from None
    except UnicodeDecodeError:
        raise CliError("validation", f"{args.input} is not valid UTF-8", EXIT_VALIDATION) from None

    schema = Schema(
        decision_col=args.decision_col,
        outcome_col=args.outcome_col,
        group_col=args.group_col,
        covariate_cols=_split(args.covariate_cols),
        condition_cols=_split(args.condition_cols),
        categorical_cols=_split(args.categorical_cols),
    )
    try:
        dataset = validate_dataset(rows, schema, header=header)
    except DatasetValidationError as exc:
        raise CliError("validation", str(exc), EXIT_VALIDATION) from None
    if len(dataset.group_labels) < 2:
        raise CliError(
            "validation",
            f"column {schema.group_col!r} has {len(dataset.group_labels)} distinct group(s); at least 2 are required",
            EXIT_VALIDATION,
        )

    estimator_name = {"freq": "frequency", "logistic": "logistic"}[args.estimator]
    mode = "conditional" if schema.condition_cols else "marginal"
    observed = dataset.observed_table()
    criteria = {"marginal": evaluate_all(observed, args.epsilon).to_dict()}
    if schema.condition_cols:
        conditional = evaluate_conditional(dataset.observed_tables_by_cell(), args.epsilon)
        criteria["conditional"] = {
            "cells": {cell_label(schema.condition_cols, cell): r.to_dict() for cell, r in conditional.cells.items()},
            "max_disparity": {c: conditional.max_disparity(c) for c in CRITERIA},
            "passed": conditional.passed,
        }

    estimator = PrincipalFairnessEstimator(
        estimator=estimator_name,
        alpha=args.alpha,
        include_group=not args.exclude_group_from_design,
        mode=mode,
        floor=args.floor,
        tau=args.tau,
        min_cell_size=args.min_cell_size,
    )
    try:
        estimator.fit(dataset)
    except SeparationError as exc:
        raise CliError("unidentifiable", str(exc), EXIT_UNIDENTIFIABLE) from None
    except ValueError as exc:
        raise CliError("validation", str(exc), EXIT_VALIDATION) from None
    if estimator.estimates_.fully_unidentified():
        raise CliError(
            "unidentifiable", "no stratum rate is identified in any cell (all denominators floored)", EXIT_UNIDENTIFIABLE
        )

    identification = {
        "estimates": estimator.estimates_.to_dict(),
        "diagnostics": estimator.diagnostics_.to_dict(estimator.estimates_.condition_cols),
        "regression": estimator.regression_.metadata,
    }
    if args.bootstrap:
        result = bootstrap(
            dataset,
            args.bootstrap,
            args.seed,
            statistic="all",
            level=args.level,
            estimator=estimator,
            n_jobs=args.jobs,
        )
        identification["bootstrap"] = result.to_dict()

    return {
        "config": {
            "estimator": estimator_name,
            "alpha": args.alpha,
            "epsilon": args.epsilon,
            "seed": args.seed,
            "bootstrap_replicates": args.bootstrap,
            "bootstrap_level": args.level,
            "mode": mode,
            "include_group_in_design": not args.exclude_group_from_design,
            "tolerances": {"floor": args.floor, "tau": args.tau, "min_cell_size": args.min_cell_size},
        },
        "input": {
            "rows": dataset.n,
            "groups": list(dataset.group_labels),
            "schema": schema.to_dict(),
            "covariate_types": dict(sorted(dataset.covariate_types.items())),
        },
        "statistical_criteria": criteria,
        "identification": identification,
        "version": __version__,
    }


def render_audit_text(report) -> str:
    out = io.StringIO()
    cfg, inp = report["config"], report["input"]
    out.write(f"rows: {inp['rows']}  groups: {', '.join(inp['groups'])}  mode: {cfg['mode']}\n")
    out.write(f"estimator: {cfg['estimator']} (alpha={cfg['alpha']})  epsilon: {cfg['epsilon']}\n\n")
    out.write("statistical fairness criteria (marginal)\n")
    for name, c in report["statistical_criteria"]["marginal"]["criteria"].items():
        verdict = "pass" if c["passed"] else "FAIL"
        out.write(f"  {name:<15} max disparity {c['max_disparity']:.4f}  {verdict}\n")
        for arm, per_group in c["values"].items():
            vals = "  ".join(f"{g}={_fmt(v)}" for g, v in per_group.items())
            out.write(f"    arm {arm}: {vals}\n")
    out.write("\nidentified decision rates Pr(D=1 | stratum, group[, cell])\n")
    for cell in report["identification"]["estimates"]["cells"]:
        out.write(f"  group {cell['group']} cell {cell['cell']} (n={cell['n']})\n")
        for s, raw in cell["rates_raw"].items():
            prob = cell["stratum_probabilities"][s]
            out.write(f"    {s:<12} rate {_fmt(raw)}  stratum share {_fmt(prob)}\n")
        for s, msg in cell["errors"].items():
            out.write(f"    ! {s}: {msg}\n")
    flagged = [c for c in report["identification"]["diagnostics"]["cells"] if _flagged(c)]
    out.write(f"\ndiagnostics: {len(flagged)} flagged cell(s)\n")
    for c in flagged:
        out.write(f"  group {c['group']} cell {c['cell']}: {_flag_text(c)}\n")
    return out.getvalue()


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def _flagged(c):
    return (
        c["negative_preventable"]
        or c["rates_out_of_range"]
        or c["denominator_below_floor"]
        or c["small_cell"]
        or c["regression_undefined"]
    )


def _flag_text(c):
    parts = []
    if c["negative_preventable"]:
        parts.append("negative preventable share")
    if c["rates_out_of_range"]:
        parts.append("rates out of range: " + ",".join(c["rates_out_of_range"]))
    if c["denominator_below_floor"]:
        parts.append("unidentified: " + ",".join(c["denominator_below_floor"]))
    if c["small_cell"]:
        parts.append("small cell")
    return "; ".join(parts)


def cmd_audit(args) -> int:
    report = build_audit_report(args)
    text = dumps_report(report) if args.format == "json" else render_audit_text(report)
    _emit(text, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / verify
# ---------------------------------------------------------------------------


def _load_spec(path):
    try:
        return load_spec(path)
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror}", EXIT_USAGE) from None
    except SpecValidationError as exc:
        raise CliError("validation", f"{path}: {exc}", EXIT_VALIDATION) from None


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise CliError("usage", f"--n must be a positive integer, got {args.n}", EXIT_USAGE)
    spec = _load_spec(args.spec)
    dataset = sample(spec, args.n, args.seed, with_latent=args.with_latent)
    _emit(write_csv(dataset), args.output)
    return EXIT_OK


def _parse_theorems(text):
    try:
        theorems = tuple(sorted({int(t) for t in _split(text)}))
    except ValueError:
        raise CliError("usage", f"--theorems expects a comma list from 1,2,3, got {text!r}", EXIT_USAGE) from None
    if not theorems or any(t not in THEOREM_CHECKS for t in theorems):
        raise CliError("usage", f"--theorems expects a comma list from 1,2,3, got {text!r}", EXIT_USAGE)
    return theorems


def cmd_verify(args) -> int:
    theorems = _parse_theorems(args.theorems)
    if (args.spec is None) == (args.suite is None):
        raise CliError("usage", "give exactly one of --spec PATH or --suite random", EXIT_USAGE)
    if args.spec is not None:
        spec = _load_spec(args.spec)
        checks = {t: [THEOREM_CHECKS[t](spec, args.tol)] for t in theorems}
        source = {"spec": str(args.spec)}
    else:
        if args.count < 1:
            raise CliError("usage", f"--count must be a positive integer, got {args.count}", EXIT_USAGE)
        checks = run_suite(theorems, args.count, args.seed, args.tol)
        source = {"suite": args.suite, "count": args.count, "seed": args.seed}

    results = {}
    failed = 0
    for t, items in checks.items():
        n_fail = sum(not c.passed for c in items)
        failed += n_fail
        results[f"theorem{t}"] = {
            "checked": len(items),
            "premises_hold": sum(c.asserted for c in items),
            "failures": n_fail,
            "checks": [c.to_dict() for c in items],
        }
    report = {"source": source, "tol": args.tol, "results": results, "all_passed": failed == 0}
    _emit(dumps_report(report), args.output)
    if failed:
        raise CliError("theorem-check", f"{failed} asserted theorem check(s) failed", EXIT_THEOREM)
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo-tables
# ---------------------------------------------------------------------------

DEMO_EPSILON = 0.01


def render_demo_tables() -> str:
    table = example_potential_table()
    observed = marginalize(table)
    rates = principal_rates(table)
    disparity = pf_disparity(rates)
    report = evaluate_all(observed, DEMO_EPSILON)
    order = ("dangerous", "backlash", "preventable", "safe")
    out = io.StringIO()
    out.write("Potential outcomes: units detained / released in each principal stratum\n")
    out.write(f"{'group':<6}{'stratum':<13}{'detained':>9}{'released':>9}{'Pr(D=1|R)':>11}\n")
    for g in table.groups:
        for label in order:
            s = PrincipalStratum.from_label(label)
            n1, n0 = table.count(g, s, 1), table.count(g, s, 0)
            out.write(f"{g:<6}{label:<13}{n1:>9}{n0:>9}{rates.rate(g, s):>11.4f}\n")
    out.write("\nObserved data\n")
    out.write(f"{'group':<6}{'D=1,Y=1':>9}{'D=0,Y=1':>9}{'D=1,Y=0':>9}{'D=0,Y=0':>9}\n")
    for g in observed.groups:
        cells = [observed.count(g, d, y) for d, y in ((1, 1), (0, 1), (1, 0), (0, 0))]
        out.write(f"{g:<6}" + "".join(f"{c:>9}" for c in cells) + "\n")
    out.write("\nPrincipal fairness: between-group disparity of Pr(D=1|R) per stratum\n")
    for label in order:
        s = PrincipalStratum.from_label(label)
        out.write(f"  {label:<13}{disparity.per_stratum[s]:.4f}\n")
    out.write(f"  holds: {'yes' if disparity.holds(0.0) else 'no'}\n")
    out.write(f"\nStatistical fairness criteria (epsilon = {DEMO_EPSILON})\n")
    labels = {
        "overall_parity": ("Pr(D=1|A)", {None: ""}),
        "calibration": ("Pr(Y=1|D,A)", {1: "D=1", 0: "D=0"}),
        "accuracy": ("Pr(D=1|Y,A)", {1: "Y=1", 0: "Y=0"}),
    }
    for name in CRITERIA:
        c = report.criteria[name]
        title, arms = labels[name]
        verdict = "pass" if c.passed(DEMO_EPSILON) else "FAIL"
        out.write(f"  {name} {title}: max disparity {c.max_disparity:.4f} {verdict}\n")
        for arm, arm_label in arms.items():
            vals = "  ".join(f"{g}={c.value(g, arm):.4f}" for g in observed.groups)
            prefix = f"{arm_label}: " if arm_label else ""
            out.write(f"    {prefix}{vals}  disparity {c.disparities[arm]:.4f}\n")
    return out.getvalue()


def cmd_demo_tables(args) -> int:
    _emit(render_demo_tables(), getattr(args, "output", None))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="principal-fairness", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("audit", help="audit a CSV dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--decision-col", required=True)
    p.add_argument("--outcome-col", required=True)
    p.add_argument("--group-col", required=True)
    p.add_argument("--covariate-cols", default="")
    p.add_argument("--condition-cols", default="")
    p.add_argument("--categorical-cols", default="", help="covariates forced to categorical")
    p.add_argument("--estimator", choices=("freq", "logistic"), default="freq")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="bootstrap threads; output does not depend on it")
    p.add_argument("--floor", type=float, default=1e-10)
    p.add_argument("--tau", type=float, default=1e-9)
    p.add_argument("--min-cell-size", type=int, default=20)
    p.add_argument("--output")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--exclude-group-from-design", action="store_true")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("simulate", help="sample a dataset from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-latent", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check the fairness theorems on exact oracles")
    p.add_argument("--spec")
    p.add_argument("--suite", choices=("random",))
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theorems", default="1,2,3")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--output")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("demo-tables", help="reproduce the two-group detention example")
    p.add_argument("--output")
    p.set_defaults(func=cmd_demo_tables)
    return parser


def _check_args(args):
    if args.command == "audit":
        if args.epsilon < 0:
            raise CliError("usage", "--epsilon must be nonnegative", EXIT_USAGE)
        if args.alpha < 0:
            raise CliError("usage", "--alpha must be nonnegative", EXIT_USAGE)
        if args.bootstrap < 0:
            raise CliError("usage", "--bootstrap must be nonnegative", EXIT_USAGE)
        if not 0 < args.level < 1:
            raise CliError("usage", "--level must lie in (0, 1)", EXIT_USAGE)
        if args.jobs < 1:
            raise CliError("usage", "--jobs must be a positive integer", EXIT_USAGE)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise CliError("usage", "a subcommand is required (audit, simulate, verify, demo-tables)", EXIT_USAGE)
        _check_args(args)
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error[{exc.kind}]: {exc}\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
