import csv
import json
import re
from pathlib import Path

import pytest

from principal_fairness.cli import main, render_demo_tables
from principal_fairness.core import MONOTONE_STRATA
from principal_fairness.simulate import builtin_spec, example_spec, exact_distribution

GOLDEN = Path(__file__).parent / "golden" / "demo_tables.txt"
ERROR_LINE = re.compile(r"^error\[[a-z-]+\]: \S.*\n$")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_spec(tmp_path, spec, name="spec.json"):
    path = tmp_path / name
    path.write_text(spec.dumps(), encoding="utf-8")
    return path


def audit_args(path, *extra):
    return (
        "audit", "--input", path, "--decision-col", "decision", "--outcome-col", "outcome",
        "--group-col", "group", "--covariate-cols", "w,x", *extra,
    )


@pytest.fixture(scope="module")
def monotone_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("data")
    spec_path = write_spec(tmp, builtin_spec("monotone_unconfounded"))
    out = tmp / "sample.csv"
    assert main(["simulate", "--spec", str(spec_path), "--n", "100000", "--seed", "7", "--output", str(out)]) == 0
    return out


class TestDemoTables:
    def test_matches_golden(self, capsys):
        code, out, _ = run(capsys, "demo-tables")
        assert code == 0
        assert out == GOLDEN.read_text(encoding="utf-8")
        assert out == render_demo_tables()

    def test_content(self):
        text = render_demo_tables()
        assert re.search(r"^A\s+150\s+100\s+100\s+150$", text, re.M)
        assert re.search(r"^B\s+100\s+100\s+120\s+180$", text, re.M)
        for label in ("dangerous", "backlash", "preventable", "safe"):
            assert re.search(rf"^  {label}\s+0\.0000$", text, re.M)
        assert "Y=1: A=0.6000  B=0.5000" in text
        assert text.count("FAIL") == 3


class TestAudit:
    def test_close_to_oracle(self, capsys, monotone_csv):
        code, out, err = run(capsys, *audit_args(monotone_csv))
        assert code == 0, err
        report = json.loads(out)
        truth = exact_distribution(builtin_spec("monotone_unconfounded")).stratum_rates()
        cells = report["identification"]["estimates"]["cells"]
        assert len(cells) == 2
        for cell in cells:
            for s in MONOTONE_STRATA:
                got = cell["rates_raw"][s.label]
                assert abs(got - truth[(cell["group"], None, s)]) <= 0.02
        assert report["config"]["epsilon"] == 0.05
        assert report["input"]["rows"] == 100000

    def test_conditional_mode(self, capsys, monotone_csv):
        code, out, err = run(capsys, *audit_args(monotone_csv, "--condition-cols", "w"))
        assert code == 0, err
        report = json.loads(out)
        assert report["config"]["mode"] == "conditional"
        assert {c["cell"] for c in report["identification"]["estimates"]["cells"]} == {"w=w0", "w=w1"}
        assert set(report["statistical_criteria"]["conditional"]["cells"]) == {"w=w0", "w=w1"}

    def test_text_format(self, capsys, monotone_csv):
        code, out, _ = run(capsys, *audit_args(monotone_csv, "--format", "text"))
        assert code == 0
        assert "preventable" in out and "overall_parity" in out

    def test_byte_identical_across_threads(self, capsys, tmp_path):
        spec_path = write_spec(tmp_path, builtin_spec("monotone_unconfounded"))
        data = tmp_path / "d.csv"
        assert main(["simulate", "--spec", str(spec_path), "--n", "3000", "--seed", "1", "--output", str(data)]) == 0
        outputs = []
        for jobs in ("1", "4", "1"):
            target = tmp_path / f"r{len(outputs)}.json"
            args = audit_args(data, "--bootstrap", "30", "--seed", "5", "--jobs", jobs, "--output", target)
            assert run(capsys, *args)[0] == 0
            outputs.append(target.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]
        assert b'"bootstrap"' in outputs[0]

    def test_unknown_column(self, capsys, monotone_csv):
        args = [a if a != "w,x" else "w,zzz" for a in audit_args(monotone_csv)]
        code, _, err = run(capsys, *args)
        assert code == 2
        assert ERROR_LINE.match(err) and "zzz" in err

    def test_identical_groups_pass_at_zero(self, capsys, tmp_path):
        path = tmp_path / "same.csv"
        base = [(d, y, x) for d in "01" for y in "01" for x in ("u", "v") for _ in range(int(d) + int(y) + 3)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "x", "decision", "outcome"])
            for g in ("A", "B"):
                for d, y, x in base:
                    w.writerow([g, x, d, y])
        args = ("audit", "--input", path, "--decision-col", "decision", "--outcome-col", "outcome",
                "--group-col", "group", "--covariate-cols", "x", "--epsilon", "0")
        code, out, err = run(capsys, *args)
        assert code == 0, err
        crit = json.loads(out)["statistical_criteria"]["marginal"]["criteria"]
        for c in crit.values():
            assert c["passed"] is True and c["max_disparity"] == 0.0

    def test_single_group(self, capsys, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("group,x,decision,outcome\nA,u,1,0\nA,u,0,1\n")
        code, _, err = run(capsys, "audit", "--input", path, "--decision-col", "decision",
                           "--outcome-col", "outcome", "--group-col", "group", "--covariate-cols", "x")
        assert code == 2 and "at least 2" in err

    def test_bad_value(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("group,x,decision,outcome\nA,u,1,0\nB,u,yes,1\n")
        code, _, err = run(capsys, "audit", "--input", path, "--decision-col", "decision",
                           "--outcome-col", "outcome", "--group-col", "group", "--covariate-cols", "x")
        assert code == 2 and "row 2" in err and ERROR_LINE.match(err)

    def test_fully_unidentified(self, capsys, tmp_path):
        path = tmp_path / "released.csv"
        rows = "".join(f"{g},u,0,{y}\n" for g in "AB" for y in "0101")
        path.write_text("group,x,decision,outcome\n" + rows)
        code, _, err = run(capsys, "audit", "--input", path, "--decision-col", "decision",
                           "--outcome-col", "outcome", "--group-col", "group", "--covariate-cols", "x")
        assert code == 3 and err.startswith("error[unidentifiable]")

    def test_separation_exit(self, capsys, tmp_path):
        path = tmp_path / "sep.csv"
        rows = ["A,-2,0,0", "A,-1,1,0", "B,1,0,1", "B,2,1,1", "A,-3,1,0", "B,3,0,1"]
        path.write_text("group,x,decision,outcome\n" + "\n".join(rows) + "\n")
        code, _, err = run(capsys, "audit", "--input", path, "--decision-col", "decision",
                           "--outcome-col", "outcome", "--group-col", "group", "--covariate-cols", "x",
                           "--estimator", "logistic", "--exclude-group-from-design")
        assert code == 3 and "frequency estimator" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, *audit_args(tmp_path / "absent.csv"))
        assert code == 1 and err.startswith("error[io]")

    def test_negative_epsilon(self, capsys, monotone_csv):
        code, _, err = run(capsys, *audit_args(monotone_csv, "--epsilon", "-1"))
        assert code == 1 and err.startswith("error[usage]")


class TestSimulate:
    def test_byte_identical(self, capsys, tmp_path):
        spec_path = write_spec(tmp_path, example_spec())
        a = run(capsys, "simulate", "--spec", spec_path, "--n", "200", "--seed", "3", "--with-latent")
        b = run(capsys, "simulate", "--spec", spec_path, "--n", "200", "--seed", "3", "--with-latent")
        assert a[0] == b[0] == 0
        assert a[1] == b[1]
        header = a[1].splitlines()[0].split(",")
        assert header == ["group", "w", "x", "decision", "outcome", "stratum"]
        assert set(line.split(",")[-1] for line in a[1].splitlines()[1:]) <= {"safe", "preventable", "backlash", "dangerous"}

    def test_zero_n(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--spec", write_spec(tmp_path, example_spec()), "--n", "0")
        assert code == 1 and ERROR_LINE.match(err)

    def test_example_group_sizes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", "--spec", write_spec(tmp_path, example_spec()), "--n", "1000", "--seed", "2024")
        assert code == 0
        groups = [line.split(",")[0] for line in out.splitlines()[1:]]
        assert len(groups) == 1000
        assert 450 <= groups.count("A") <= 550 and 450 <= groups.count("B") <= 550

    def test_invalid_spec(self, capsys, tmp_path):
        data = example_spec().to_dict()
        data["stratum_probs"]["A"]["w0"]["safe"] = 0.5
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data))
        code, _, err = run(capsys, "simulate", "--spec", path, "--n", "10")
        assert code == 2 and "stratum_probs.A.w0" in err


class TestVerify:
    def test_random_suite(self, capsys):
        code, out, err = run(capsys, "verify", "--suite", "random", "--count", "100", "--theorems", "1,3", "--tol", "1e-9")
        assert code == 0, err
        report = json.loads(out)
        assert report["all_passed"] is True
        assert report["results"]["theorem1"]["checked"] == 100
        assert report["results"]["theorem3"]["premises_hold"] == 100

    def test_premises_unmet(self, capsys, tmp_path):
        code, out, _ = run(capsys, "verify", "--spec", write_spec(tmp_path, example_spec()), "--theorems", "1")
        assert code == 0
        check = json.loads(out)["results"]["theorem1"]["checks"][0]
        assert check["premises_hold"] is False
        assert "premises unmet; conclusion not asserted" in check["notes"]

    def test_premises_hold(self, capsys, tmp_path):
        data = example_spec().to_dict()
        data["stratum_probs"]["B"] = data["stratum_probs"]["A"]
        data["enforce_assumption1"] = True
        path = tmp_path / "fair.json"
        path.write_text(json.dumps(data))
        code, out, err = run(capsys, "verify", "--spec", path, "--theorems", "1")
        assert code == 0, err
        check = json.loads(out)["results"]["theorem1"]["checks"][0]
        assert check["premises_hold"] is True
        for per_cell in check["measurements"]["criteria_disparity"].values():
            assert all(v <= 1e-12 for v in per_cell.values())

    def test_needs_one_source(self, capsys):
        code, _, err = run(capsys, "verify", "--theorems", "1")
        assert code == 1 and ERROR_LINE.match(err)

    def test_bad_theorem_list(self, capsys):
        code, _, err = run(capsys, "verify", "--suite", "random", "--theorems", "1,7")
        assert code == 1 and ERROR_LINE.match(err)


def test_no_subcommand(capsys):
    code, _, err = run(capsys)
    assert code == 1 and ERROR_LINE.match(err)


def test_unknown_flag(capsys):
    code, _, err = run(capsys, "demo-tables", "--bogus")
    assert code == 1 and ERROR_LINE.match(err)
