import dataclasses
import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from principal_fairness.core import (
    MONOTONE_STRATA,
    STRATA,
    DatasetValidationError,
    ObservedTable,
    PotentialOutcomeTable,
    PrincipalStratum,
    Schema,
    UnitRecord,
    example_potential_table,
    marginalize,
    read_csv,
    realized_outcome,
    stratum_from_potentials,
    validate_dataset,
    write_csv,
)

SAFE, PREVENTABLE, BACKLASH, DANGEROUS = (
    PrincipalStratum.SAFE,
    PrincipalStratum.PREVENTABLE,
    PrincipalStratum.BACKLASH,
    PrincipalStratum.DANGEROUS,
)


def hand_marginalize(mapping):
    """Reference marginalization written out cell by cell.

    ``mapping[g][label] = (detained, released)``.  Y(1) is the first potential
    outcome of the stratum, Y(0) the second.
    """
    potentials = {"safe": (0, 0), "preventable": (0, 1), "backlash": (1, 0), "dangerous": (1, 1)}
    out = {}
    for g, rows in mapping.items():
        cells = {(d, y): 0 for d in (0, 1) for y in (0, 1)}
        for label, (n1, n0) in rows.items():
            y1, y0 = potentials[label]
            cells[(1, y1)] += n1
            cells[(0, y0)] += n0
        out[g] = cells
    return out


DETENTION_COUNTS = {
    "A": {"dangerous": (120, 30), "backlash": (30, 30), "preventable": (70, 70), "safe": (30, 120)},
    "B": {"dangerous": (80, 20), "backlash": (20, 20), "preventable": (80, 80), "safe": (40, 160)},
}


class TestStrata:
    def test_pairs(self):
        assert stratum_from_potentials(1, 1) is DANGEROUS
        assert stratum_from_potentials(0, 1) is PREVENTABLE
        assert stratum_from_potentials(0, 0) is SAFE
        assert stratum_from_potentials(1, 0) is BACKLASH

    def test_round_trip_is_identity(self):
        assert len(STRATA) == 4
        assert {(s.y1, s.y0) for s in STRATA} == {(0, 0), (0, 1), (1, 0), (1, 1)}
        for s in STRATA:
            assert stratum_from_potentials(s.y1, s.y0) is s
            assert PrincipalStratum.from_label(s.label) is s

    def test_monotone_strata_exclude_backlash(self):
        assert BACKLASH not in MONOTONE_STRATA
        assert len(MONOTONE_STRATA) == 3

    def test_realized_outcome(self):
        assert realized_outcome(PREVENTABLE, 0) == 1
        assert realized_outcome(SAFE, 1) == 0
        assert realized_outcome(BACKLASH, 1) == 1
        for s in STRATA:
            assert realized_outcome(s, 1) == s.y1
            assert realized_outcome(s, 0) == s.y0

    @pytest.mark.parametrize("bad", [2, -1, 0.5, "1"])
    def test_rejects_non_binary(self, bad):
        with pytest.raises((ValueError, TypeError)):
            stratum_from_potentials(bad, 0)
        with pytest.raises((ValueError, TypeError)):
            realized_outcome(SAFE, bad)

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            PrincipalStratum.from_label("lucky")


class TestTables:
    def test_example_table_matches_mapping(self):
        table = example_potential_table()
        for g, rows in DETENTION_COUNTS.items():
            for label, (n1, n0) in rows.items():
                s = PrincipalStratum.from_label(label)
                assert table.count(g, s, 1) == n1
                assert table.count(g, s, 0) == n0
        assert list(table.group_totals()) == [500, 500]

    def test_marginalize_example(self):
        observed = marginalize(example_potential_table())
        expected = hand_marginalize(DETENTION_COUNTS)
        assert expected["A"] == {(1, 1): 150, (0, 1): 100, (1, 0): 100, (0, 0): 150}
        assert expected["B"] == {(1, 1): 100, (0, 1): 100, (1, 0): 120, (0, 0): 180}
        for g in ("A", "B"):
            for (d, y), n in expected[g].items():
                assert observed.count(g, d, y) == n
        assert observed == ObservedTable.from_mapping(expected)

    def test_all_zero_table(self):
        table = PotentialOutcomeTable(("A", "B"), np.zeros((2, 4, 2), dtype=int))
        observed = marginalize(table)
        assert observed.total() == 0
        assert np.all(observed.counts == 0)

    def test_one_unit_per_cell(self):
        table = PotentialOutcomeTable(("A", "B"), np.ones((2, 4, 2), dtype=int))
        observed = marginalize(table)
        assert np.all(observed.counts == 2)

    def test_negative_counts_rejected(self):
        counts = np.zeros((1, 4, 2))
        counts[0, 0, 0] = -1
        with pytest.raises(ValueError):
            PotentialOutcomeTable(("A",), counts)

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            ObservedTable(("A", "B"), np.zeros((1, 2, 2)))

    def test_duplicate_groups_rejected(self):
        with pytest.raises(ValueError):
            ObservedTable(("A", "A"), np.zeros((2, 2, 2)))

    def test_tables_are_immutable(self):
        table = example_potential_table()
        with pytest.raises(ValueError):
            table.counts[0, 0, 0] = 5


counts_strategy = st.lists(
    st.lists(st.lists(st.integers(0, 50), min_size=2, max_size=2), min_size=4, max_size=4),
    min_size=1,
    max_size=4,
)


@settings(max_examples=200, deadline=None)
@given(counts_strategy)
def test_marginalize_conserves_mass_and_matches_reference(counts):
    arr = np.array(counts)
    groups = tuple(f"g{i}" for i in range(len(counts)))
    table = PotentialOutcomeTable(groups, arr)
    observed = marginalize(table)
    assert np.array_equal(observed.group_totals(), table.group_totals())
    mapping = {
        g: {s.label: (int(arr[i, s.index, 1]), int(arr[i, s.index, 0])) for s in STRATA}
        for i, g in enumerate(groups)
    }
    assert observed == ObservedTable.from_mapping(hand_marginalize(mapping))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(["A", "B", "C"]), st.sampled_from(STRATA), st.integers(0, 1)),
        min_size=1,
        max_size=60,
    )
)
def test_records_round_trip(units):
    """Observed table from records equals marginalize of their potential table."""
    rows = []
    for g, s, d in units:
        rows.append({"g": g, "d": str(d), "y": str(realized_outcome(s, d)), "stratum": s.label})
    ds = validate_dataset(rows, Schema("d", "y", "g"))
    latent = np.array([s.index for _, s, _ in units], dtype=np.int8)
    ds = dataclasses.replace(ds, latent=latent)
    assert ds.observed_table() == marginalize(ds.potential_table())
    for rec, (g, s, d) in zip(ds.records, units):
        assert rec.latent_stratum is s and rec.group == g and rec.decision == d


class TestUnitRecord:
    def test_consistent(self):
        rec = UnitRecord(decision=0, outcome=1, group="A", latent_stratum=PREVENTABLE)
        assert rec.outcome == 1

    def test_inconsistent_latent(self):
        with pytest.raises(ValueError):
            UnitRecord(decision=1, outcome=1, group="A", latent_stratum=PREVENTABLE)

    def test_non_binary(self):
        with pytest.raises(ValueError):
            UnitRecord(decision=2, outcome=0, group="A")


def _rows(values):
    return [{"d": d, "y": y, "g": g, "x": x} for d, y, g, x in values]


class TestValidateDataset:
    schema = Schema("d", "y", "g", ("x",))

    def test_four_rows(self):
        ds = validate_dataset(
            _rows([("1", "0", "A", "a"), ("0", "1", "B", "b"), ("1", "1", "A", "b"), ("0", "0", "B", "a")]),
            self.schema,
        )
        assert ds.n == 4
        assert len(list(ds.records)) == 4
        assert ds.group_labels == ("A", "B")
        assert ds.covariate_types == {"x": "categorical"}

    def test_bad_decision_names_row_three(self):
        rows = _rows([("1", "0", "A", "a"), ("0", "1", "B", "b"), ("2", "1", "A", "b"), ("0", "0", "B", "a")])
        with pytest.raises(DatasetValidationError) as info:
            validate_dataset(rows, self.schema)
        issues = info.value.issues
        assert len(issues) == 1
        assert issues[0].row == 3
        assert issues[0].column == "d"
        assert "row 3" in str(info.value) and "'d'" in str(info.value)

    def test_condition_column_not_covariate(self):
        schema = Schema("d", "y", "g", ("x",), condition_cols=("w",))
        rows = [dict(r, w="u") for r in _rows([("1", "0", "A", "a")])]
        with pytest.raises(DatasetValidationError) as info:
            validate_dataset(rows, schema)
        assert any(i.column == "w" and i.row is None for i in info.value.issues)

    def test_missing_designated_column(self):
        with pytest.raises(DatasetValidationError) as info:
            validate_dataset(_rows([("1", "0", "A", "a")]), Schema("d", "y", "grp", ("x",)))
        assert any(i.column == "grp" for i in info.value.issues)

    def test_empty_input(self):
        with pytest.raises(DatasetValidationError):
            validate_dataset([], self.schema, header=["d", "y", "g", "x"])

    def test_missing_value_rejected(self):
        with pytest.raises(DatasetValidationError) as info:
            validate_dataset(_rows([("1", "0", "A", ""), ("1", "", "B", "a")]), self.schema)
        assert {(i.row, i.column) for i in info.value.issues} == {(1, "x"), (2, "y")}

    @pytest.mark.parametrize("bad", ["1.0", " 1", "true", "01"])
    def test_decision_accepts_only_exact_strings(self, bad):
        with pytest.raises(DatasetValidationError):
            validate_dataset(_rows([(bad, "0", "A", "a")]), self.schema)

    def test_numeric_inference_and_override(self):
        rows = _rows([("1", "0", "A", "1"), ("0", "1", "B", "2.5"), ("0", "1", "B", "-3e1")])
        ds = validate_dataset(rows, self.schema)
        assert ds.covariate_types["x"] == "numeric"
        assert list(ds.covariates["x"]) == [1.0, 2.5, -30.0]
        forced = validate_dataset(rows, Schema("d", "y", "g", ("x",), categorical_cols=("x",)))
        assert forced.covariate_types["x"] == "categorical"

    def test_numeric_condition_must_be_discrete(self):
        schema = Schema("d", "y", "g", ("x",), condition_cols=("x",))
        with pytest.raises(DatasetValidationError):
            validate_dataset(_rows([("1", "0", "A", "0.5"), ("0", "0", "B", "1")]), schema)
        ds = validate_dataset(_rows([("1", "0", "A", "2"), ("0", "0", "B", "1")]), schema)
        assert ds.condition_cells() == [(1.0,), (2.0,)]


class TestCsv:
    def test_quoted_fields_round_trip(self):
        text = 'g,x,d,y\n"A, north","say ""hi""",1,0\nB,plain,0,1\n'
        header, rows = read_csv(io.StringIO(text))
        assert header == ["g", "x", "d", "y"]
        ds = validate_dataset(rows, Schema("d", "y", "g", ("x",)), header=header)
        assert ds.group_labels == ("A, north", "B")
        assert ds.covariates["x"][0] == 'say "hi"'
        out = write_csv(ds)
        header2, rows2 = read_csv(io.StringIO(out))
        assert rows2 == [{"g": r["g"], "x": r["x"], "d": r["d"], "y": r["y"]} for r in rows]

    def test_probability_masses(self):
        table = PotentialOutcomeTable(("A",), np.full((1, 4, 2), 0.125))
        observed = marginalize(table)
        assert np.allclose(observed.counts, 0.25)
        assert Fraction(float(observed.total())) == 1
