"""End-to-end acceptance checks.

Each test evaluates one criterion at its stated tolerance and records a
one-line PASS/FAIL verdict.  The lines are printed in the pytest terminal
summary (see ``conftest.py``) and also when this file is run directly:

    python3 tests/test_acceptance.py
"""

import json
import time
import timeit
from fractions import Fraction

import numpy as np
import pytest

from principal_fairness.cli import main
from principal_fairness.core import MONOTONE_STRATA, STRATA, PrincipalStratum, example_potential_table, marginalize
from principal_fairness.identify import PrincipalFairnessEstimator, identify_rates
from principal_fairness.metrics import evaluate_all, pf_disparity, principal_rates
from principal_fairness.regression import fit_frequency_regression
from principal_fairness.simulate import (
    DecisionModel,
    DgpSpec,
    builtin_spec,
    check_theorem1,
    check_theorem2_equivalence,
    check_theorem3,
    exact_distribution,
    random_spec,
    sample,
    suite_rng,
)

S = PrincipalStratum
RESULTS = []
SUITE_SEED = 0


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    return passed


def test_criterion_1_table_reproduction():
    expected = {
        "A": {(1, 1): 150, (0, 1): 100, (1, 0): 100, (0, 0): 150},
        "B": {(1, 1): 100, (0, 1): 100, (1, 0): 120, (0, 0): 180},
    }
    observed = marginalize(example_potential_table())
    exact = all(observed.count(g, d, y) == n for g, cells in expected.items() for (d, y), n in cells.items())
    exact = exact and observed.counts.dtype.kind in "iu"
    seconds = min(timeit.repeat(lambda: marginalize(example_potential_table()), number=1, repeat=200))
    ok = exact and seconds < 1e-3
    assert record(1, "marginalized example equals the observed table", ok, f"exact={exact}, {seconds * 1e6:.1f} us")


def test_criterion_2_principal_rates():
    table = example_potential_table()
    rates = principal_rates(table)
    target = {S.DANGEROUS: Fraction(4, 5), S.BACKLASH: Fraction(1, 2), S.PREVENTABLE: Fraction(1, 2), S.SAFE: Fraction(1, 5)}
    worst = 0.0
    for gi, g in enumerate(table.groups):
        for s in STRATA:
            n1, n0 = (int(table.counts[gi, s.index, d]) for d in (1, 0))
            assert Fraction(n1, n1 + n0) == target[s]
            worst = max(worst, abs(rates.rate(g, s) - float(target[s])))
    disparity = pf_disparity(rates).max_disparity
    ok = worst <= 1e-15 and disparity <= 1e-15
    assert record(2, "stratum rates 0.8/0.5/0.5/0.2 in both groups", ok, f"max error {worst:.1e}, disparity {disparity:.1e}")


def test_criterion_3_criteria_fail():
    report = evaluate_all(marginalize(example_potential_table()), 0.01)
    acc, par = report.criteria["accuracy"], report.criteria["overall_parity"]
    values_ok = (
        abs(acc.value("A", 1) - 0.6) <= 1e-12
        and abs(acc.value("B", 1) - 0.5) <= 1e-12
        and abs(par.value("A") - 0.5) <= 1e-12
        and abs(par.value("B") - 0.44) <= 1e-12
    )
    all_fail = not any(report.passed.values())
    ok = values_ok and all_fail
    assert record(3, "all three criteria fail at eps=0.01", ok, f"passed={report.passed}, values_ok={values_ok}")


def test_criterion_4_fairness_implies_criteria_suite():
    start = time.perf_counter()
    worst, asserted = 0.0, 0
    for i in range(100):
        check = check_theorem1(random_spec(suite_rng(SUITE_SEED, 1, i), "theorem1"), tol=1e-12)
        asserted += check.asserted
        worst = max(worst, check.measurements["max_criteria_disparity"])
    elapsed = time.perf_counter() - start
    ok = asserted == 100 and worst <= 1e-12 and elapsed < 10
    assert record(4, "criteria hold under fairness + equal strata", ok, f"100 specs, worst {worst:.1e}, {elapsed:.2f} s")


def _pf_violation_spec():
    row = {"safe": 0.4, "preventable": 0.3, "backlash": 0.0, "dangerous": 0.3}
    rates = {"safe": 0.2, "preventable": 0.5, "dangerous": 0.8}
    return DgpSpec(
        group_probs={"A": 0.5, "B": 0.5},
        stratum_probs={"A": {"w0": dict(row)}, "B": {"w0": dict(row)}},
        decision=DecisionModel("stratum", {"A": {"w0": dict(rates)}, "B": {"w0": dict(rates, dangerous=0.6)}}),
        enforce_assumption1=True,
        enforce_monotonicity=True,
    )


def test_criterion_5_equivalence_suite():
    start = time.perf_counter()
    checks = []
    for i in range(100):
        # Alternate the two constructed sides so both are always represented.
        spec = random_spec(suite_rng(SUITE_SEED, 2, i), "theorem2", enforce_pf=i % 2 == 0)
        checks.append(check_theorem2_equivalence(spec, tol=1e-9))
    checks.append(check_theorem2_equivalence(_pf_violation_spec(), tol=1e-9))
    elapsed = time.perf_counter() - start
    sides = [c.measurements["pf_holds"] for c in checks]
    ok = (
        all(c.asserted and c.measurements["equivalent"] for c in checks)
        and any(sides)
        and not all(sides)
        and elapsed < 10
    )
    detail = f"{len(checks)} specs, {sum(sides)} fair / {len(sides) - sum(sides)} unfair, {elapsed:.2f} s"
    assert record(5, "fairness <=> all criteria under monotone equal strata", ok, detail)


def test_criterion_6_identification_suite():
    start = time.perf_counter()
    worst_m = worst_c = 0.0
    asserted = 0
    for i in range(100):
        check = check_theorem3(random_spec(suite_rng(SUITE_SEED, 3, i), "theorem3"), tol=1e-12)
        asserted += check.asserted
        worst_m = max(worst_m, check.measurements["max_deviation_marginal"])
        worst_c = max(worst_c, check.measurements["max_deviation_conditional"])
    elapsed = time.perf_counter() - start
    ok = asserted == 100 and max(worst_m, worst_c) <= 1e-12 and elapsed < 10
    detail = f"marginal {worst_m:.1e}, conditional {worst_c:.1e}, {elapsed:.2f} s"
    assert record(6, "plug-in rates equal oracle rates", ok, detail)


def test_criterion_7_convergence():
    spec = builtin_spec("monotone_unconfounded")
    truth = exact_distribution(spec).stratum_rates()
    start = time.perf_counter()
    medians = {}
    for n in (10_000, 100_000):
        errors = []
        for seed in range(20):
            est = PrincipalFairnessEstimator().fit(sample(spec, n, seed)).estimates_
            errors.append(
                max(abs(c.raw_rates[s] - truth[(c.group, None, s)]) for c in est.cells for s in MONOTONE_STRATA)
            )
        medians[n] = float(np.median(errors))
    elapsed = time.perf_counter() - start
    ok = medians[10_000] <= 0.05 and medians[100_000] <= 0.02 and elapsed < 60
    detail = f"median max error {medians[10_000]:.4f} at 1e4, {medians[100_000]:.4f} at 1e5, {elapsed:.1f} s"
    assert record(7, "finite-sample convergence", ok, detail)


def _diagnostic_spec(backlash):
    # Preventable 0.1; backlash mass taken from (or returned to) the safe stratum.
    row = {"safe": 0.6 - backlash, "preventable": 0.1, "backlash": backlash, "dangerous": 0.3}
    return DgpSpec(
        group_probs={"A": 0.5, "B": 0.5},
        x_probs={"A": {"w0": {"x0": 0.4, "x1": 0.6}}, "B": {"w0": {"x0": 0.7, "x1": 0.3}}},
        stratum_probs={"A": {"w0": dict(row)}, "B": {"w0": dict(row)}},
        decision=DecisionModel("covariate", {"x0": 0.3, "x1": 0.7}),
    )


def test_criterion_8_diagnostics():
    flags = {}
    for backlash in (0.15, 0.0):
        ds = exact_distribution(_diagnostic_spec(backlash)).to_dataset(with_latent=False)
        _, diag = identify_rates(ds, fit_frequency_regression(ds), tau=1e-9)
        flags[backlash] = diag.any_monotonicity_flag
    ok = flags[0.15] and not flags[0.0]
    assert record(8, "monotonicity diagnostics", ok, f"flag with backlash 0.15: {flags[0.15]}, with 0: {flags[0.0]}")


def test_criterion_9_determinism(tmp_path, capsys):
    data = tmp_path / "data.csv"
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(builtin_spec("monotone_unconfounded").dumps())
    assert main(["simulate", "--spec", str(spec_path), "--n", "5000", "--seed", "3", "--output", str(data)]) == 0
    outputs = []
    for run, jobs in enumerate(("1", "1", "4")):
        target = tmp_path / f"report{run}.json"
        argv = [
            "audit", "--input", str(data), "--decision-col", "decision", "--outcome-col", "outcome",
            "--group-col", "group", "--covariate-cols", "w,x", "--condition-cols", "w",
            "--bootstrap", "50", "--seed", "11", "--jobs", jobs, "--output", str(target),
        ]
        assert main(argv) == 0
        outputs.append(target.read_bytes())
    capsys.readouterr()
    json.loads(outputs[0])
    ok = outputs[0] == outputs[1] == outputs[2]
    assert record(9, "byte-identical audit reports", ok, f"3 runs, threads 1/1/4, {len(outputs[0])} bytes")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
