"""Principal strata, unit records, datasets, and the two contingency-table views.

A principal stratum is the pair of potential outcomes ``(Y(1), Y(0))``.  The
potential-outcome table counts units by (group, stratum, decision); the observed
table counts units by (group, decision, outcome).  :func:`marginalize` maps the
first onto the second using ``Y = Y(D)``.
"""

import csv
import enum
import io
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from ._validation import check_binary


class PrincipalStratum(enum.Enum):
    """Joint potential outcomes ``(y_under_decision_1, y_under_decision_0)``."""

    SAFE = (0, 0)
    PREVENTABLE = (0, 1)
    BACKLASH = (1, 0)
    DANGEROUS = (1, 1)

    @property
    def y1(self) -> int:
        return self.value[0]

    @property
    def y0(self) -> int:
        return self.value[1]

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def index(self) -> int:
        return _STRATUM_ORDER.index(self)

    @classmethod
    def from_label(cls, label: str) -> "PrincipalStratum":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            valid = ", ".join(s.label for s in cls)
            raise ValueError(f"unknown stratum {label!r}; expected one of {valid}") from None

    def __repr__(self):
        return f"PrincipalStratum.{self.name}"


_STRATUM_ORDER = tuple(PrincipalStratum)
STRATA = _STRATUM_ORDER
# Strata that remain under monotonicity, Y(1) <= Y(0).
MONOTONE_STRATA = (
    PrincipalStratum.SAFE,
    PrincipalStratum.PREVENTABLE,
    PrincipalStratum.DANGEROUS,
)


def stratum_from_potentials(y1, y0) -> PrincipalStratum:
    """Return the stratum with potential outcomes ``Y(1) = y1`` and ``Y(0) = y0``."""
    return PrincipalStratum((check_binary(y1, "y1"), check_binary(y0, "y0")))


def realized_outcome(stratum: PrincipalStratum, decision) -> int:
    """Outcome observed when a unit of ``stratum`` receives ``decision``."""
    d = check_binary(decision, "decision")
    return stratum.y1 if d == 1 else stratum.y0


# y[stratum_index, decision]
_REALIZED = np.array([[s.y0, s.y1] for s in _STRATUM_ORDER], dtype=np.int8)


# ---------------------------------------------------------------------------
# Contingency tables
# ---------------------------------------------------------------------------


def _freeze(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _as_mass_array(counts, shape, name):
    arr = np.asarray(counts)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValueError(f"{name} must be numeric")
    if np.isnan(arr).any() if arr.dtype.kind == "f" else False:
        raise ValueError(f"{name} contains NaN")
    if (arr < 0).any():
        raise ValueError(f"{name} must be nonnegative")
    return _freeze(arr)


def _check_groups(groups):
    groups = tuple(str(g) for g in groups)
    if len(set(groups)) != len(groups):
        raise ValueError(f"group labels must be distinct, got {groups}")
    return groups


@dataclass(frozen=True, eq=False)
class PotentialOutcomeTable:
    """Unit counts indexed by (group, stratum, decision).

    ``counts[g, s, d]`` is the mass of group ``groups[g]`` in stratum
    ``STRATA[s]`` that received decision ``d``.  Masses are usually integer
    counts; exact probability masses from an oracle are accepted as well.
    """

    groups: tuple
    counts: np.ndarray

    def __post_init__(self):
        groups = _check_groups(self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(
            self, "counts", _as_mass_array(self.counts, (len(groups), 4, 2), "counts")
        )

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "PotentialOutcomeTable":
        """Build from ``{group: {stratum: (n_decision_1, n_decision_0)}}``.

        Strata may be given as :class:`PrincipalStratum` members or labels;
        missing strata count as zero.
        """
        groups = list(mapping)
        counts = np.zeros((len(groups), 4, 2), dtype=np.int64)
        for g, group in enumerate(groups):
            for key, (n1, n0) in mapping[group].items():
                s = key if isinstance(key, PrincipalStratum) else PrincipalStratum.from_label(key)
                counts[g, s.index, 1] = n1
                counts[g, s.index, 0] = n0
        return cls(tuple(groups), counts)

    def count(self, group, stratum: PrincipalStratum, decision) -> float:
        return self.counts[self.groups.index(str(group)), stratum.index, check_binary(decision)]

    def group_totals(self) -> np.ndarray:
        return self.counts.sum(axis=(1, 2))

    def total(self):
        return self.counts.sum()


@dataclass(frozen=True, eq=False)
class ObservedTable:
    """Unit counts indexed by (group, decision, outcome): ``counts[g, d, y]``."""

    groups: tuple
    counts: np.ndarray

    def __post_init__(self):
        groups = _check_groups(self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(
            self, "counts", _as_mass_array(self.counts, (len(groups), 2, 2), "counts")
        )

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "ObservedTable":
        """Build from ``{group: {(decision, outcome): n}}``."""
        groups = list(mapping)
        counts = np.zeros((len(groups), 2, 2), dtype=np.int64)
        for g, group in enumerate(groups):
            for (d, y), n in mapping[group].items():
                counts[g, check_binary(d), check_binary(y)] = n
        return cls(tuple(groups), counts)

    def count(self, group, decision, outcome) -> float:
        return self.counts[
            self.groups.index(str(group)), check_binary(decision), check_binary(outcome)
        ]

    def group_totals(self) -> np.ndarray:
        return self.counts.sum(axis=(1, 2))

    def total(self):
        return self.counts.sum()

    def __eq__(self, other):
        if not isinstance(other, ObservedTable):
            return NotImplemented
        return self.groups == other.groups and np.array_equal(self.counts, other.counts)

    __hash__ = None


def marginalize(table: PotentialOutcomeTable) -> ObservedTable:
    """Collapse strata: the observed cell (g, d, y) sums strata whose Y(d) equals y."""
    observed = np.zeros((len(table.groups), 2, 2), dtype=table.counts.dtype)
    for s in range(4):
        for d in (0, 1):
            observed[:, d, _REALIZED[s, d]] += table.counts[:, s, d]
    return ObservedTable(table.groups, observed)


def example_potential_table() -> PotentialOutcomeTable:
    """The pretrial-detention illustration: 500 arrestees in each of two groups.

    Within every stratum both groups share the same detention rate (0.8
    dangerous, 0.5 backlash, 0.5 preventable, 0.2 safe) while the stratum
    mix differs between groups.
    """
    return PotentialOutcomeTable.from_mapping(
        {
            "A": {
                PrincipalStratum.DANGEROUS: (120, 30),
                PrincipalStratum.BACKLASH: (30, 30),
                PrincipalStratum.PREVENTABLE: (70, 70),
                PrincipalStratum.SAFE: (30, 120),
            },
            "B": {
                PrincipalStratum.DANGEROUS: (80, 20),
                PrincipalStratum.BACKLASH: (20, 20),
                PrincipalStratum.PREVENTABLE: (80, 80),
                PrincipalStratum.SAFE: (40, 160),
            },
        }
    )


# ---------------------------------------------------------------------------
# Records and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitRecord:
    decision: int
    outcome: int
    group: str
    covariates: tuple = ()
    latent_stratum: Optional[PrincipalStratum] = None

    def __post_init__(self):
        object.__setattr__(self, "decision", check_binary(self.decision, "decision"))
        object.__setattr__(self, "outcome", check_binary(self.outcome, "outcome"))
        if self.latent_stratum is not None:
            if realized_outcome(self.latent_stratum, self.decision) != self.outcome:
                raise ValueError(
                    f"outcome {self.outcome} is inconsistent with stratum "
                    f"{self.latent_stratum.label} under decision {self.decision}"
                )


@dataclass(frozen=True)
class Schema:
    """Column roles for tabular input.

    ``condition_cols`` (the conditioning set W) must be a subset of
    ``covariate_cols``.  ``categorical_cols`` and ``numeric_cols`` override
    the inferred covariate types.
    """

    decision_col: str
    outcome_col: str
    group_col: str
    covariate_cols: tuple = ()
    condition_cols: tuple = ()
    categorical_cols: tuple = ()
    numeric_cols: tuple = ()

    def __post_init__(self):
        for name in ("covariate_cols", "condition_cols", "categorical_cols", "numeric_cols"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def designated(self) -> tuple:
        return (self.decision_col, self.outcome_col, self.group_col) + self.covariate_cols

    def to_dict(self) -> dict:
        return {
            "decision_col": self.decision_col,
            "outcome_col": self.outcome_col,
            "group_col": self.group_col,
            "covariate_cols": list(self.covariate_cols),
            "condition_cols": list(self.condition_cols),
        }


@dataclass(frozen=True)
class ValidationIssue:
    row: Optional[int]
    column: Optional[str]
    reason: str

    def __str__(self):
        where = []
        if self.row is not None:
            where.append(f"row {self.row}")
        if self.column is not None:
            where.append(f"column {self.column!r}")
        prefix = ", ".join(where)
        return f"{prefix}: {self.reason}" if prefix else self.reason


class DatasetValidationError(ValueError):
    """Raised with the full list of row- and schema-level problems."""

    def __init__(self, issues: Sequence[ValidationIssue]):
        self.issues = list(issues)
        head = "; ".join(str(i) for i in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"{len(self.issues)} validation error(s): {head}{more}")


_DECIMAL = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _is_decimal(text: str) -> bool:
    return bool(_DECIMAL.match(text.strip()))


def _is_integral(values: np.ndarray) -> bool:
    return bool(np.all(np.floor(values) == values))


def format_cell_value(value) -> str:
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return str(int(value))
    return str(value)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar store of validated unit records.

    ``weights`` is ``None`` for ordinary data.  Population-level datasets
    built from an exact oracle carry one record per support atom with its
    probability as weight, so every frequency below becomes an exact
    probability.
    """

    schema: Schema
    decision: np.ndarray
    outcome: np.ndarray
    group: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    covariate_types: Mapping[str, str] = field(default_factory=dict)
    latent: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.decision)
        arrays = [self.outcome, self.group, *self.covariates.values()]
        if self.latent is not None:
            arrays.append(self.latent)
        if self.weights is not None:
            arrays.append(self.weights)
        if any(len(a) != n for a in arrays):
            raise ValueError("all dataset columns must have the same length")
        missing = [c for c in self.schema.covariate_cols if c not in self.covariates]
        if missing:
            raise ValueError(f"covariate columns missing from data: {missing}")
        extra = [c for c in self.schema.condition_cols if c not in self.schema.covariate_cols]
        if extra:
            raise ValueError(f"condition columns {extra} are not covariate columns")
        object.__setattr__(self, "decision", _freeze(np.asarray(self.decision, dtype=np.int8)))
        object.__setattr__(self, "outcome", _freeze(np.asarray(self.outcome, dtype=np.int8)))
        object.__setattr__(self, "group", _freeze(np.asarray(self.group, dtype=object)))
        object.__setattr__(
            self, "covariates", {k: _freeze(v) for k, v in self.covariates.items()}
        )
        types = dict(self.covariate_types)
        for name, col in self.covariates.items():
            types.setdefault(name, "numeric" if col.dtype.kind == "f" else "categorical")
        object.__setattr__(self, "covariate_types", types)
        if self.latent is not None:
            latent = _freeze(np.asarray(self.latent, dtype=np.int8))
            if (_REALIZED[latent, self.decision] != self.outcome).any():
                raise ValueError("observed outcomes disagree with latent strata")
            object.__setattr__(self, "latent", latent)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if (w < 0).any():
                raise ValueError("weights must be nonnegative")
            object.__setattr__(self, "weights", _freeze(w))

    def __len__(self):
        return len(self.decision)

    @property
    def n(self) -> int:
        return len(self.decision)

    @property
    def group_labels(self) -> tuple:
        return tuple(sorted(set(self.group.tolist())))

    @property
    def unit_weights(self) -> np.ndarray:
        return np.ones(self.n) if self.weights is None else self.weights

    @property
    def records(self) -> Iterator[UnitRecord]:
        cols = [self.covariates[c] for c in self.schema.covariate_cols]
        for i in range(self.n):
            yield UnitRecord(
                decision=int(self.decision[i]),
                outcome=int(self.outcome[i]),
                group=self.group[i],
                covariates=tuple(c[i].item() if hasattr(c[i], "item") else c[i] for c in cols),
                latent_stratum=None if self.latent is None else STRATA[self.latent[i]],
            )

    def take(self, indices) -> "Dataset":
        """Row subset (with repetition allowed), used for resampling."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            schema=self.schema,
            decision=self.decision[idx],
            outcome=self.outcome[idx],
            group=self.group[idx],
            covariates={k: v[idx] for k, v in self.covariates.items()},
            covariate_types=self.covariate_types,
            latent=None if self.latent is None else self.latent[idx],
            weights=None if self.weights is None else self.weights[idx],
        )

    def condition_keys(self) -> list:
        """Per-unit tuple of condition-column values (empty tuples when W is empty)."""
        cols = [self.covariates[c] for c in self.schema.condition_cols]
        if not cols:
            return [()] * self.n
        return list(zip(*(c.tolist() for c in cols)))

    def condition_cells(self) -> list:
        return self.condition_codes()[0]

    def condition_codes(self) -> tuple:
        """Sorted distinct W-cells and each unit's index into them."""
        keys = self.condition_keys()
        cells = sorted(set(keys), key=lambda k: tuple(map(str, k)))
        lookup = {c: i for i, c in enumerate(cells)}
        codes = np.fromiter((lookup[k] for k in keys), dtype=np.intp, count=self.n)
        return cells, codes

    def observed_table(self, mask=None) -> ObservedTable:
        return _tabulate_observed(self, self.group_labels, mask)

    def observed_tables_by_cell(self) -> dict:
        cells, codes = self.condition_codes()
        groups = self.group_labels
        return {cell: _tabulate_observed(self, groups, codes == i) for i, cell in enumerate(cells)}

    def potential_table(self) -> PotentialOutcomeTable:
        if self.latent is None:
            raise ValueError("dataset carries no latent strata")
        groups = self.group_labels
        counts = np.zeros((len(groups), 4, 2), dtype=float if self.weights is not None else np.int64)
        g_idx = np.searchsorted(np.array(groups, dtype=object), self.group)
        np.add.at(counts, (g_idx, self.latent, self.decision), self._mass())
        return PotentialOutcomeTable(groups, counts)

    def _mass(self):
        return np.ones(self.n, dtype=np.int64) if self.weights is None else self.weights


def _tabulate_observed(ds: Dataset, groups, mask=None) -> ObservedTable:
    counts = np.zeros((len(groups), 2, 2), dtype=float if ds.weights is not None else np.int64)
    g_idx = np.searchsorted(np.array(groups, dtype=object), ds.group)
    mass = ds._mass()
    d, y = ds.decision, ds.outcome
    if mask is not None:
        g_idx, mass, d, y = g_idx[mask], mass[mask], d[mask], y[mask]
    np.add.at(counts, (g_idx, d, y), mass)
    return ObservedTable(groups, counts)


def validate_dataset(raw_rows: Sequence[Mapping[str, str]], schema: Schema, header=None) -> Dataset:
    """Type and check raw string rows against ``schema``.

    Row numbers in reported issues are 1-based data rows (the header is not
    counted).  All problems are collected and raised together as a
    :class:`DatasetValidationError`.
    """
    issues = []
    rows = list(raw_rows)
    if header is None:
        header = list(rows[0].keys()) if rows else []
    header = list(header)

    for col in schema.condition_cols:
        if col not in schema.covariate_cols:
            issues.append(
                ValidationIssue(None, col, "condition column is not among the covariate columns")
            )
    for col in schema.designated():
        if col not in header:
            issues.append(ValidationIssue(None, col, "column not found in input header"))
    for col in schema.categorical_cols + schema.numeric_cols:
        if col not in schema.covariate_cols:
            issues.append(ValidationIssue(None, col, "type override names a non-covariate column"))
    if not rows:
        issues.append(ValidationIssue(None, None, "input contains no data rows"))
    if issues:
        raise DatasetValidationError(issues)

    decision = np.zeros(len(rows), dtype=np.int8)
    outcome = np.zeros(len(rows), dtype=np.int8)
    group = np.empty(len(rows), dtype=object)
    raw_cov = {c: [] for c in schema.covariate_cols}

    for i, row in enumerate(rows, start=1):
        for col, target in ((schema.decision_col, decision), (schema.outcome_col, outcome)):
            value = row.get(col)
            if value is None or value == "":
                issues.append(ValidationIssue(i, col, "missing value"))
            elif value not in ("0", "1"):
                issues.append(ValidationIssue(i, col, f"expected 0 or 1, got {value!r}"))
            else:
                target[i - 1] = int(value)
        g = row.get(schema.group_col)
        if g is None or g == "":
            issues.append(ValidationIssue(i, schema.group_col, "missing value"))
        group[i - 1] = g
        for col in schema.covariate_cols:
            value = row.get(col)
            if value is None or value.strip() == "":
                issues.append(ValidationIssue(i, col, "missing value"))
            raw_cov[col].append("" if value is None else value)

    covariates, types = {}, {}
    for col, values in raw_cov.items():
        if col in schema.categorical_cols:
            kind = "categorical"
        elif col in schema.numeric_cols:
            kind = "numeric"
        else:
            kind = "numeric" if all(_is_decimal(v) for v in values if v.strip()) else "categorical"
        if kind == "numeric":
            parsed = np.zeros(len(values))
            for i, v in enumerate(values, start=1):
                if not v.strip():
                    continue
                if not _is_decimal(v):
                    issues.append(ValidationIssue(i, col, f"expected a number, got {v!r}"))
                else:
                    parsed[i - 1] = float(v)
            covariates[col] = parsed
        else:
            arr = np.empty(len(values), dtype=object)
            arr[:] = values
            covariates[col] = arr
        types[col] = kind

    for col in schema.condition_cols:
        if types.get(col) == "numeric" and not _is_integral(covariates[col]):
            issues.append(
                ValidationIssue(
                    None, col, "numeric condition column must be discretized (integer-valued)"
                )
            )
    if issues:
        raise DatasetValidationError(issues)

    return Dataset(
        schema=schema,
        decision=decision,
        outcome=outcome,
        group=group,
        covariates=covariates,
        covariate_types=types,
    )


def read_csv(source) -> tuple:
    """Read comma-separated UTF-8 text with a header row.

    ``source`` is a path or an open text stream.  Returns ``(header, rows)``
    where rows are dicts of raw strings.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return _read_csv_stream(fh)
    return _read_csv_stream(source)


def _read_csv_stream(fh):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetValidationError([ValidationIssue(None, None, "input is empty; header row required")])
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DatasetValidationError([ValidationIssue(None, None, "duplicate column names in header")])
    rows = []
    issues = []
    for i, values in enumerate(reader, start=1):
        if not values:
            continue
        if len(values) != len(header):
            issues.append(
                ValidationIssue(i, None, f"expected {len(header)} fields, found {len(values)}")
            )
            continue
        rows.append(dict(zip(header, values)))
    if issues:
        raise DatasetValidationError(issues)
    return header, rows


def write_csv(dataset: Dataset, target=None) -> str:
    """Write ``dataset`` as CSV; returns the text when ``target`` is None."""
    s = dataset.schema
    header = [s.group_col, *s.covariate_cols, s.decision_col, s.outcome_col]
    if dataset.latent is not None:
        header.append("stratum")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    cols = [dataset.covariates[c] for c in s.covariate_cols]
    for i in range(dataset.n):
        row = [dataset.group[i], *(format_cell_value(c[i]) for c in cols)]
        row += [int(dataset.decision[i]), int(dataset.outcome[i])]
        if dataset.latent is not None:
            row.append(STRATA[dataset.latent[i]].label)
        writer.writerow(row)
    text = buf.getvalue()
    if target is None:
        return text
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text
