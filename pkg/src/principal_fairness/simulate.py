"""Finite-support data-generating processes with exact oracles.

A :class:`DgpSpec` describes the law of (A, W, X, R, D) on a finite support:

    A ~ group_probs
    W | A ~ w_probs[a]
    X | A, W ~ x_probs[a][w]
    R | A, W ~ stratum_probs[a][w]
    D | ... ~ decision model
    Y = Y(D) read off the stratum

The decision model is either stratum-based, Pr(D=1 | R, W, A), which lets
principal fairness hold by construction, or covariate-based, Pr(D=1 | X),
which makes the decision unconfounded given X by construction.

:func:`exact_distribution` enumerates the joint law, and the ``check_*``
functions compare both sides of each fairness result on that exact law.
"""

import json
import math
from importlib import resources
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, Optional

import numpy as np

from ._validation import check_positive_int
from .core import (
    _REALIZED,
    MONOTONE_STRATA,
    STRATA,
    Dataset,
    ObservedTable,
    PotentialOutcomeTable,
    PrincipalStratum,
    Schema,
)
from .identify import identify_rates
from .metrics import CRITERIA, evaluate_conditional, pf_disparity, principal_rates
from .regression import fit_frequency_regression

BACKLASH = PrincipalStratum.BACKLASH
NORMALIZATION_TOL = 1e-12
DEFAULT_MAX_ATOMS = 10**7
DEFAULT_W = "w0"
DEFAULT_X = "x0"
STRATUM_LABELS = tuple(s.label for s in STRATA)


# ---------------------------------------------------------------------------
# Specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpecIssue:
    path: str
    reason: str

    def __str__(self):
        return f"{self.path}: {self.reason}" if self.path else self.reason


class SpecValidationError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class DecisionModel:
    """``kind="stratum"``: ``rates[a][w][stratum_label]`` = Pr(D=1 | R, W, A).
    ``kind="covariate"``: ``rates[x]`` = Pr(D=1 | X=x)."""

    kind: str
    rates: Mapping


@dataclass(frozen=True)
class DgpSpec:
    group_probs: Mapping[str, float]
    stratum_probs: Mapping[str, Mapping[str, Mapping[str, float]]]
    decision: DecisionModel
    w_probs: Optional[Mapping[str, Mapping[str, float]]] = None
    x_probs: Optional[Mapping[str, Mapping[str, Mapping[str, float]]]] = None
    enforce_assumption1: bool = False
    enforce_monotonicity: bool = False
    enforce_pf: bool = False

    def __post_init__(self):
        groups = list(self.group_probs)
        if self.w_probs is None:
            object.__setattr__(self, "w_probs", {a: {DEFAULT_W: 1.0} for a in groups})
        if self.x_probs is None:
            object.__setattr__(
                self, "x_probs", {a: {w: {DEFAULT_X: 1.0} for w in self.w_probs.get(a, {})} for a in groups}
            )

    @property
    def groups(self) -> tuple:
        return tuple(self.group_probs)

    @property
    def w_labels(self) -> tuple:
        return tuple(sorted({w for a in self.w_probs for w in self.w_probs[a]}))

    @property
    def x_labels(self) -> tuple:
        return tuple(
            sorted({x for a in self.x_probs for w in self.x_probs[a] for x in self.x_probs[a][w]})
        )

    @property
    def support_sizes(self) -> dict:
        atoms = sum(len(self.x_probs.get(a, {}).get(w, {})) * 8 for a in self.w_probs for w in self.w_probs[a])
        return {
            "groups": len(self.groups),
            "w_cells": len(self.w_labels),
            "x_cells": len(self.x_labels),
            "atoms": atoms,
        }

    def stratum_prob(self, a, w, stratum: PrincipalStratum) -> float:
        return float(self.stratum_probs[a][w].get(stratum.label, 0.0))

    def decision_prob(self, a, w, x, stratum: PrincipalStratum) -> float:
        if self.decision.kind == "stratum":
            return float(self.decision.rates[a][w][stratum.label])
        return float(self.decision.rates[x])

    def to_dict(self) -> dict:
        return {
            "group_probs": dict(self.group_probs),
            "w_probs": _plain(self.w_probs),
            "x_probs": _plain(self.x_probs),
            "stratum_probs": _plain(self.stratum_probs),
            "decision": {"kind": self.decision.kind, "rates": _plain(self.decision.rates)},
            "enforce_assumption1": self.enforce_assumption1,
            "enforce_monotonicity": self.enforce_monotonicity,
            "enforce_pf": self.enforce_pf,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DgpSpec":
        return _spec_from_dict(data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    return obj


_SPEC_FIELDS = {
    "group_probs",
    "w_probs",
    "x_probs",
    "stratum_probs",
    "decision",
    "enforce_assumption1",
    "enforce_monotonicity",
    "enforce_pf",
}


def _require_mapping(obj, path, issues):
    if not isinstance(obj, Mapping):
        issues.append(SpecIssue(path, f"expected an object, got {type(obj).__name__}"))
        return False
    return True


def _number_map(obj, path, issues, allowed_keys=None) -> dict:
    out = {}
    if not _require_mapping(obj, path, issues):
        return out
    for k, v in obj.items():
        if allowed_keys is not None and k not in allowed_keys:
            issues.append(SpecIssue(f"{path}.{k}", f"unknown key; expected one of {', '.join(allowed_keys)}"))
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            issues.append(SpecIssue(f"{path}.{k}", f"expected a number, got {v!r}"))
            continue
        out[str(k)] = float(v)
    return out


def _looks_like_strata(obj) -> bool:
    return isinstance(obj, Mapping) and obj and all(k in STRATUM_LABELS for k in obj)


def _spec_from_dict(data) -> DgpSpec:
    issues = []
    if not _require_mapping(data, "", issues):
        raise SpecValidationError(issues)
    for key in data:
        if key not in _SPEC_FIELDS:
            issues.append(SpecIssue(key, "unknown field"))
    for key in ("group_probs", "stratum_probs", "decision"):
        if key not in data:
            issues.append(SpecIssue(key, "required field missing"))
    if issues:
        raise SpecValidationError(issues)

    group_probs = _number_map(data["group_probs"], "group_probs", issues)

    w_probs = None
    if data.get("w_probs") is not None and _require_mapping(data["w_probs"], "w_probs", issues):
        w_probs = {a: _number_map(v, f"w_probs.{a}", issues) for a, v in data["w_probs"].items()}
    default_w = w_probs is None

    x_probs = None
    if data.get("x_probs") is not None and _require_mapping(data["x_probs"], "x_probs", issues):
        x_probs = {}
        for a, per_a in data["x_probs"].items():
            if default_w and not all(isinstance(v, Mapping) for v in per_a.values()):
                per_a = {DEFAULT_W: per_a}
            if _require_mapping(per_a, f"x_probs.{a}", issues):
                x_probs[a] = {w: _number_map(v, f"x_probs.{a}.{w}", issues) for w, v in per_a.items()}

    stratum_probs = {}
    if _require_mapping(data["stratum_probs"], "stratum_probs", issues):
        for a, per_a in data["stratum_probs"].items():
            if _looks_like_strata(per_a):
                per_a = {DEFAULT_W: per_a} if default_w else {w: per_a for w in (w_probs or {}).get(a, {})}
            if _require_mapping(per_a, f"stratum_probs.{a}", issues):
                stratum_probs[a] = {
                    w: _number_map(v, f"stratum_probs.{a}.{w}", issues, STRATUM_LABELS)
                    for w, v in per_a.items()
                }

    dec = data["decision"]
    decision = None
    if _require_mapping(dec, "decision", issues):
        kind = dec.get("kind")
        rates = dec.get("rates")
        if kind not in ("stratum", "covariate"):
            issues.append(SpecIssue("decision.kind", f"expected 'stratum' or 'covariate', got {kind!r}"))
        elif rates is None:
            issues.append(SpecIssue("decision.rates", "required field missing"))
        elif kind == "covariate":
            decision = DecisionModel("covariate", _number_map(rates, "decision.rates", issues))
        elif _require_mapping(rates, "decision.rates", issues):
            parsed = {}
            for a, per_a in rates.items():
                if _looks_like_strata(per_a):
                    per_a = {DEFAULT_W: per_a} if default_w else {w: per_a for w in (w_probs or {}).get(a, {})}
                if _require_mapping(per_a, f"decision.rates.{a}", issues):
                    parsed[a] = {
                        w: _number_map(v, f"decision.rates.{a}.{w}", issues, STRATUM_LABELS)
                        for w, v in per_a.items()
                    }
            decision = DecisionModel("stratum", parsed)

    flags = {}
    for flag in ("enforce_assumption1", "enforce_monotonicity", "enforce_pf"):
        value = data.get(flag, False)
        if not isinstance(value, bool):
            issues.append(SpecIssue(flag, f"expected true or false, got {value!r}"))
        flags[flag] = bool(value)
    if issues:
        raise SpecValidationError(issues)
    return DgpSpec(
        group_probs=group_probs,
        stratum_probs=stratum_probs,
        decision=decision,
        w_probs=w_probs,
        x_probs=x_probs,
        **flags,
    )


def load_spec(path) -> DgpSpec:
    """Read a JSON spec file; syntax errors carry line and column."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return loads_spec(text)


def loads_spec(text: str) -> DgpSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecValidationError(
            [SpecIssue(f"line {exc.lineno}, column {exc.colno}", f"invalid JSON: {exc.msg}")]
        ) from None
    return validate_spec(DgpSpec.from_dict(data))


def builtin_specs() -> tuple:
    """Names of the spec files shipped with the package."""
    root = resources.files(__package__) / "specs"
    return tuple(sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json")))


def builtin_spec(name: str) -> DgpSpec:
    """Load a shipped spec by name, e.g. ``"detention_example"``."""
    if name not in builtin_specs():
        raise ValueError(f"unknown built-in spec {name!r}; available: {', '.join(builtin_specs())}")
    return loads_spec((resources.files(__package__) / "specs" / f"{name}.json").read_text(encoding="utf-8"))


def _check_row(row: Mapping, path, issues, tol):
    for k, v in row.items():
        if not 0.0 <= v <= 1.0:
            issues.append(SpecIssue(f"{path}.{k}", f"probability {v!r} outside [0, 1]"))
    total = sum(row.values())
    if abs(total - 1.0) > tol:
        issues.append(SpecIssue(path, f"row sums to {total!r}, expected 1"))


def validate_spec(spec: DgpSpec, tol=NORMALIZATION_TOL) -> DgpSpec:
    """Check normalization, coverage, and every ``enforce_*`` flag against the tables.

    Returns ``spec`` unchanged on success; raises :class:`SpecValidationError`
    listing every problem otherwise.
    """
    issues = []
    groups = spec.groups
    if not groups:
        issues.append(SpecIssue("group_probs", "at least one group is required"))
    _check_row(spec.group_probs, "group_probs", issues, tol)
    for a in groups:
        if a not in spec.w_probs:
            issues.append(SpecIssue(f"w_probs.{a}", "missing row for group"))
            continue
        _check_row(spec.w_probs[a], f"w_probs.{a}", issues, tol)
        for w in spec.w_probs[a]:
            x_row = spec.x_probs.get(a, {}).get(w)
            if x_row is None:
                issues.append(SpecIssue(f"x_probs.{a}.{w}", "missing row"))
            else:
                _check_row(x_row, f"x_probs.{a}.{w}", issues, tol)
            r_row = spec.stratum_probs.get(a, {}).get(w)
            if r_row is None:
                issues.append(SpecIssue(f"stratum_probs.{a}.{w}", "missing row"))
                continue
            _check_row(r_row, f"stratum_probs.{a}.{w}", issues, tol)
            if spec.decision.kind == "stratum":
                d_row = spec.decision.rates.get(a, {}).get(w)
                if d_row is None:
                    issues.append(SpecIssue(f"decision.rates.{a}.{w}", "missing row"))
                    continue
                for label in STRATUM_LABELS:
                    if r_row.get(label, 0.0) > 0 and label not in d_row:
                        issues.append(SpecIssue(f"decision.rates.{a}.{w}.{label}", "missing rate for stratum with mass"))
                for label, q in d_row.items():
                    if not 0.0 <= q <= 1.0:
                        issues.append(SpecIssue(f"decision.rates.{a}.{w}.{label}", f"rate {q!r} outside [0, 1]"))
    if spec.decision.kind == "covariate":
        for x in spec.x_labels:
            if x not in spec.decision.rates:
                issues.append(SpecIssue(f"decision.rates.{x}", "missing rate for covariate cell"))
        for x, q in spec.decision.rates.items():
            if not 0.0 <= q <= 1.0:
                issues.append(SpecIssue(f"decision.rates.{x}", f"rate {q!r} outside [0, 1]"))
    if issues:
        raise SpecValidationError(issues)

    if spec.enforce_monotonicity:
        for a in groups:
            for w in spec.w_probs[a]:
                mass = spec.stratum_prob(a, w, BACKLASH)
                if mass > 0:
                    issues.append(
                        SpecIssue(
                            f"stratum_probs.{a}.{w}.backlash",
                            f"enforce_monotonicity contradicted: backlash mass {mass!r} > 0",
                        )
                    )
    if spec.enforce_assumption1:
        for w in spec.w_labels:
            rows = [(a, spec.stratum_probs[a][w]) for a in groups if w in spec.w_probs[a]]
            for a, row in rows[1:]:
                ref_a, ref = rows[0]
                gap = max(abs(row.get(s, 0.0) - ref.get(s, 0.0)) for s in STRATUM_LABELS)
                if gap > tol:
                    issues.append(
                        SpecIssue(
                            f"stratum_probs.{a}.{w}",
                            f"enforce_assumption1 contradicted: differs from group {ref_a} by {gap!r}",
                        )
                    )
    if spec.enforce_pf:
        if spec.decision.kind != "stratum":
            issues.append(SpecIssue("enforce_pf", "requires a stratum-based decision model"))
        else:
            for w in spec.w_labels:
                rows = [(a, spec.decision.rates[a][w]) for a in groups if w in spec.w_probs[a]]
                for a, row in rows[1:]:
                    ref_a, ref = rows[0]
                    for s in STRATUM_LABELS:
                        if s in row and s in ref and abs(row[s] - ref[s]) > tol:
                            issues.append(
                                SpecIssue(
                                    f"decision.rates.{a}.{w}.{s}",
                                    f"enforce_pf contradicted: {row[s]!r} vs {ref[s]!r} in group {ref_a}",
                                )
                            )
    if issues:
        raise SpecValidationError(issues)
    return spec


def example_spec() -> DgpSpec:
    """The two-group detention example as a distribution over its 1000 units."""
    return validate_spec(
        DgpSpec(
            group_probs={"A": 0.5, "B": 0.5},
            stratum_probs={
                "A": {DEFAULT_W: {"dangerous": 150 / 500, "backlash": 60 / 500, "preventable": 140 / 500, "safe": 150 / 500}},
                "B": {DEFAULT_W: {"dangerous": 100 / 500, "backlash": 40 / 500, "preventable": 160 / 500, "safe": 200 / 500}},
            },
            decision=DecisionModel(
                "stratum",
                {
                    a: {DEFAULT_W: {"dangerous": 0.8, "backlash": 0.5, "preventable": 0.5, "safe": 0.2}}
                    for a in ("A", "B")
                },
            ),
            enforce_pf=True,
        )
    )


# ---------------------------------------------------------------------------
# Exact oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleDistribution:
    """Exact joint mass over support atoms (A, W, X, R, D) with Y = Y(D).

    Atom arrays hold integer codes into ``groups``, ``w_labels``,
    ``x_labels`` and :data:`STRATA`.
    """

    spec: DgpSpec
    groups: tuple
    w_labels: tuple
    x_labels: tuple
    group: np.ndarray
    w: np.ndarray
    x: np.ndarray
    stratum: np.ndarray
    decision: np.ndarray
    outcome: np.ndarray
    prob: np.ndarray

    def total(self) -> float:
        return float(self.prob.sum())

    @property
    def n_atoms(self) -> int:
        return len(self.prob)

    def _w_index(self, w):
        return self.w_labels.index(w)

    def _mask(self, w=None):
        if w is None:
            return np.ones(self.n_atoms, dtype=bool)
        return self.w == self._w_index(w)

    def potential_table(self, w=None) -> PotentialOutcomeTable:
        """Masses Pr(A=a[, W=w], R=r, D=d) for groups with positive mass."""
        m = self._mask(w)
        counts = np.zeros((len(self.groups), 4, 2))
        np.add.at(counts, (self.group[m], self.stratum[m], self.decision[m]), self.prob[m])
        keep = counts.sum(axis=(1, 2)) > 0
        return PotentialOutcomeTable(tuple(g for g, k in zip(self.groups, keep) if k), counts[keep])

    def observed_table(self, w=None) -> ObservedTable:
        m = self._mask(w)
        counts = np.zeros((len(self.groups), 2, 2))
        np.add.at(counts, (self.group[m], self.decision[m], self.outcome[m]), self.prob[m])
        keep = counts.sum(axis=(1, 2)) > 0
        return ObservedTable(tuple(g for g, k in zip(self.groups, keep) if k), counts[keep])

    def w_cells(self) -> tuple:
        present = sorted(set(self.w[self.prob > 0].tolist()))
        return tuple(self.w_labels[i] for i in present)

    @cached_property
    def _by_group_w_stratum(self):
        mass = np.zeros((len(self.groups), len(self.w_labels), 4, 2))
        np.add.at(mass, (self.group, self.w, self.stratum, self.decision), self.prob)
        return mass

    def stratum_rates(self, conditional=False) -> dict:
        """Exact Pr(D=1 | R, A[, W]) keyed ``(group, w_label | None, stratum)``."""
        mass = self._by_group_w_stratum
        out = {}
        if not conditional:
            mass = mass.sum(axis=1, keepdims=True)
        for gi, g in enumerate(self.groups):
            for wi in range(mass.shape[1]):
                w = self.w_labels[wi] if conditional else None
                for s in STRATA:
                    d1, tot = mass[gi, wi, s.index, 1], mass[gi, wi, s.index].sum()
                    out[(g, w, s)] = float(d1 / tot) if tot > 0 else None
        return out

    def stratum_distribution(self, conditional=False) -> dict:
        """Exact Pr(R | A[, W]) keyed ``(group, w_label | None)``; absent cells omitted."""
        mass = self._by_group_w_stratum.sum(axis=3)
        if not conditional:
            mass = mass.sum(axis=1, keepdims=True)
        out = {}
        for gi, g in enumerate(self.groups):
            for wi in range(mass.shape[1]):
                tot = mass[gi, wi].sum()
                if tot > 0:
                    w = self.w_labels[wi] if conditional else None
                    out[(g, w)] = {s: float(mass[gi, wi, s.index] / tot) for s in STRATA}
        return out

    def backlash_mass(self) -> float:
        return float(self.prob[self.stratum == BACKLASH.index].sum())

    def joint_dy(self, conditional=False) -> dict:
        """Exact Pr(D, Y | A[, W]) as 2x2 arrays."""
        mass = np.zeros((len(self.groups), len(self.w_labels), 2, 2))
        np.add.at(mass, (self.group, self.w, self.decision, self.outcome), self.prob)
        if not conditional:
            mass = mass.sum(axis=1, keepdims=True)
        out = {}
        for gi, g in enumerate(self.groups):
            for wi in range(mass.shape[1]):
                tot = mass[gi, wi].sum()
                if tot > 0:
                    out[(g, self.w_labels[wi] if conditional else None)] = mass[gi, wi] / tot
        return out

    def potential_outcome_probability(self, decision, conditional=False) -> dict:
        """Exact Pr(Y(d) = 1 | A[, W])."""
        dist = self.stratum_distribution(conditional)
        pick = (lambda s: s.y1) if decision == 1 else (lambda s: s.y0)
        return {k: sum(p for s, p in v.items() if pick(s) == 1) for k, v in dist.items()}

    def to_dataset(self, with_latent=True) -> Dataset:
        """Population-level dataset: one weighted record per atom with positive mass."""
        m = self.prob > 0
        w_col = np.array(self.w_labels, dtype=object)[self.w[m]]
        x_col = np.array(self.x_labels, dtype=object)[self.x[m]]
        return Dataset(
            schema=_SIM_SCHEMA,
            decision=self.decision[m],
            outcome=self.outcome[m],
            group=np.array(self.groups, dtype=object)[self.group[m]],
            covariates={"w": w_col, "x": x_col},
            covariate_types={"w": "categorical", "x": "categorical"},
            latent=self.stratum[m] if with_latent else None,
            weights=self.prob[m],
        )


_SIM_SCHEMA = Schema(
    decision_col="decision",
    outcome_col="outcome",
    group_col="group",
    covariate_cols=("w", "x"),
    condition_cols=("w",),
)
_SAMPLE_SCHEMA = Schema("decision", "outcome", "group", ("w", "x"))


def exact_distribution(spec: DgpSpec, max_atoms=DEFAULT_MAX_ATOMS) -> OracleDistribution:
    """Enumerate the joint law of ``spec``; zero-probability atoms are dropped."""
    validate_spec(spec)
    size = spec.support_sizes["atoms"]
    if size > max_atoms:
        raise ValueError(f"support has {size} atoms, above the cap of {max_atoms}")
    groups, w_labels, x_labels = spec.groups, spec.w_labels, spec.x_labels
    rows = []
    for gi, a in enumerate(groups):
        pa = spec.group_probs[a]
        for w, pw in spec.w_probs[a].items():
            wi = w_labels.index(w)
            for x, px in spec.x_probs[a][w].items():
                xi = x_labels.index(x)
                for s in STRATA:
                    pr = spec.stratum_prob(a, w, s)
                    base = pa * pw * px * pr
                    if base <= 0:
                        continue
                    q = spec.decision_prob(a, w, x, s)
                    for d, pd in ((1, q), (0, 1.0 - q)):
                        if pd > 0:
                            rows.append((gi, wi, xi, s.index, d, base * pd))
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    codes = arr[:, :5].astype(np.intp)
    decision = codes[:, 4].astype(np.int8)
    stratum = codes[:, 3].astype(np.int8)
    return OracleDistribution(
        spec=spec,
        groups=groups,
        w_labels=w_labels,
        x_labels=x_labels,
        group=codes[:, 0],
        w=codes[:, 1],
        x=codes[:, 2],
        stratum=stratum,
        decision=decision,
        outcome=_REALIZED[stratum, decision],
        prob=arr[:, 5],
    )


def oracle_stratum_rates(oracle: OracleDistribution, conditional=False) -> dict:
    """Exact Pr(D=1 | R, A[, W]); None on zero-mass strata."""
    return oracle.stratum_rates(conditional)


def sample(spec: DgpSpec, n, seed, with_latent=False) -> Dataset:
    """Draw ``n`` i.i.d. units from ``spec``.

    Uniforms come from numpy's PCG64 bit generator seeded with ``seed``;
    each draw selects an atom by inverse-CDF lookup over the oracle atoms in
    enumeration order, so output depends only on (spec, n, seed).
    """
    n = check_positive_int(n, "n")
    oracle = exact_distribution(spec)
    rng = np.random.Generator(np.random.PCG64(seed))
    cdf = np.cumsum(oracle.prob)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    idx = np.minimum(idx, oracle.n_atoms - 1)
    return Dataset(
        schema=_SAMPLE_SCHEMA,
        decision=oracle.decision[idx],
        outcome=oracle.outcome[idx],
        group=np.array(oracle.groups, dtype=object)[oracle.group[idx]],
        covariates={
            "w": np.array(oracle.w_labels, dtype=object)[oracle.w[idx]],
            "x": np.array(oracle.x_labels, dtype=object)[oracle.x[idx]],
        },
        covariate_types={"w": "categorical", "x": "categorical"},
        latent=oracle.stratum[idx] if with_latent else None,
    )


# ---------------------------------------------------------------------------
# Theorem checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremCheck:
    """Outcome of checking one result on one spec.

    ``asserted`` is True when every premise holds on the oracle; ``passed``
    is False only when an asserted conclusion is violated.
    """

    theorem: int
    premises: Mapping[str, bool]
    asserted: bool
    passed: bool
    measurements: Mapping[str, Any] = field(default_factory=dict)
    notes: tuple = ()

    def to_dict(self) -> dict:
        notes = list(self.notes)
        if not self.asserted:
            notes.insert(0, "premises unmet; conclusion not asserted")
        return {
            "theorem": self.theorem,
            "premises": dict(self.premises),
            "premises_hold": self.asserted,
            "passed": self.passed,
            "measurements": dict(self.measurements),
            "notes": notes,
        }


def _assumption1_gap(oracle: OracleDistribution) -> float:
    dist = oracle.stratum_distribution(conditional=True)
    gap = 0.0
    for w in oracle.w_cells():
        rows = [v for (g, wl), v in dist.items() if wl == w]
        for s in STRATA:
            vals = [r[s] for r in rows]
            gap = max(gap, max(vals) - min(vals))
    return gap


def _pf_gap_by_w(oracle: OracleDistribution) -> dict:
    return {w: pf_disparity(principal_rates(oracle.potential_table(w))).max_disparity for w in oracle.w_cells()}


def _criteria_by_w(oracle: OracleDistribution, tol) -> dict:
    report = evaluate_conditional({w: oracle.observed_table(w) for w in oracle.w_cells()}, tol)
    return {w: {c: r.criteria[c].max_disparity for c in CRITERIA} for w, r in report.cells.items()}


def check_theorem1(spec: DgpSpec, tol=1e-12) -> TheoremCheck:
    """Principal fairness given W plus strata independent of A given W
    should force all three criteria to hold within every W-cell."""
    oracle = exact_distribution(spec)
    pf_gaps = _pf_gap_by_w(oracle)
    a1_gap = _assumption1_gap(oracle)
    premises = {
        "principal_fairness": max(pf_gaps.values(), default=0.0) <= tol,
        "assumption1": a1_gap <= tol,
    }
    criteria = _criteria_by_w(oracle, tol)
    worst = max((d for per in criteria.values() for d in per.values()), default=0.0)
    asserted = all(premises.values())
    return TheoremCheck(
        theorem=1,
        premises=premises,
        asserted=asserted,
        passed=(not asserted) or worst <= tol,
        measurements={
            "pf_disparity": max(pf_gaps.values(), default=0.0),
            "assumption1_gap": a1_gap,
            "criteria_disparity": criteria,
            "max_criteria_disparity": worst,
        },
    )


def check_theorem2_equivalence(spec: DgpSpec, tol=1e-9) -> TheoremCheck:
    """Under strata independent of A given W and monotonicity, principal
    fairness given W should hold exactly when all three criteria do."""
    oracle = exact_distribution(spec)
    a1_gap = _assumption1_gap(oracle)
    backlash = oracle.backlash_mass()
    premises = {"assumption1": a1_gap <= tol, "monotonicity": backlash <= tol}
    pf_gap = max(_pf_gap_by_w(oracle).values(), default=0.0)
    criteria = _criteria_by_w(oracle, tol)
    worst = max((d for per in criteria.values() for d in per.values()), default=0.0)
    pf_holds = pf_gap <= tol
    criteria_hold = worst <= tol
    asserted = all(premises.values())
    return TheoremCheck(
        theorem=2,
        premises=premises,
        asserted=asserted,
        passed=(not asserted) or pf_holds == criteria_hold,
        measurements={
            "pf_disparity": pf_gap,
            "max_criteria_disparity": worst,
            "pf_holds": pf_holds,
            "criteria_hold": criteria_hold,
            "equivalent": pf_holds == criteria_hold,
            "assumption1_gap": a1_gap,
            "backlash_mass": backlash,
        },
    )


def _unconfoundedness_gap(oracle: OracleDistribution) -> float:
    """Largest spread of Pr(D=1 | R, X, A, W) across strata within a covariate cell."""
    mass = np.zeros((len(oracle.groups), len(oracle.w_labels), len(oracle.x_labels), 4, 2))
    np.add.at(mass, (oracle.group, oracle.w, oracle.x, oracle.stratum, oracle.decision), oracle.prob)
    tot = mass.sum(axis=4)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(tot > 0, mass[..., 1] / np.where(tot > 0, tot, 1), np.nan)
    gap = 0.0
    for cell in rate.reshape(-1, 4):
        vals = cell[~np.isnan(cell)]
        if vals.size > 1:
            gap = max(gap, float(vals.max() - vals.min()))
    return gap


def plugin_deviation(oracle: OracleDistribution, conditional=False, floor=1e-10):
    """Max |plug-in rate - oracle rate| with the saturated regression fit to the exact law.

    Returns ``(max_deviation, notes)``; strata with no oracle mass are
    skipped and noted.
    """
    ds = oracle.to_dataset(with_latent=False)
    reg = fit_frequency_regression(ds, alpha=0.0, include_group=True)
    estimates, _ = identify_rates(ds, reg, mode="conditional" if conditional else "marginal", floor=floor)
    truth = oracle.stratum_rates(conditional)
    worst, notes = 0.0, []
    for cell in estimates.cells:
        w = cell.w_cell[0] if conditional else None
        for s in MONOTONE_STRATA:
            true_rate = truth.get((cell.group, w, s))
            where = f"group {cell.group}" + (f", w={w}" if conditional else "")
            if true_rate is None:
                notes.append(f"{where}: stratum {s.label} has no mass; excluded")
                continue
            est = cell.raw_rates[s]
            if est is None:
                notes.append(f"{where}: stratum {s.label} unidentified ({cell.errors[s]})")
                worst = math.inf
                continue
            worst = max(worst, abs(est - true_rate))
    return worst, notes


def check_theorem3(spec: DgpSpec, tol=1e-12) -> TheoremCheck:
    """Plug-in rates from exact observables should equal the oracle
    stratum rates under monotonicity and unconfoundedness, both marginally
    and within W-cells."""
    oracle = exact_distribution(spec)
    backlash = oracle.backlash_mass()
    unconf = _unconfoundedness_gap(oracle)
    premises = {"monotonicity": backlash <= tol, "unconfoundedness": unconf <= tol}
    dev_m, notes_m = plugin_deviation(oracle, conditional=False)
    dev_c, notes_c = plugin_deviation(oracle, conditional=True)
    worst = max(dev_m, dev_c)
    asserted = all(premises.values())
    return TheoremCheck(
        theorem=3,
        premises=premises,
        asserted=asserted,
        passed=(not asserted) or worst <= tol,
        measurements={
            "max_deviation_marginal": dev_m,
            "max_deviation_conditional": dev_c,
            "max_deviation": worst,
            "backlash_mass": backlash,
            "unconfoundedness_gap": unconf,
        },
        notes=tuple(notes_m + notes_c),
    )


THEOREM_CHECKS = {1: check_theorem1, 2: check_theorem2_equivalence, 3: check_theorem3}


# ---------------------------------------------------------------------------
# Random spec families
# ---------------------------------------------------------------------------


def _simplex(rng, k) -> list:
    u = rng.random(k)
    return (u / u.sum()).tolist()


def _labelled(prefix, values) -> dict:
    return {f"{prefix}{i}": v for i, v in enumerate(values)}


def random_spec(rng: np.random.Generator, family: str, enforce_pf=None) -> DgpSpec:
    """Draw a spec from one of three premise-satisfying families.

    Support sizes: 1-3 groups, 1-2 W-cells, 1-4 X-cells, each uniform.
    Probability rows are uniform draws normalized to sum to one; decision
    rates are uniform on [0, 1).

    ``"theorem1"``: stratum-based decisions, principal fairness given W and
    strata independent of the group given W.
    ``"theorem2"``: stratum-based decisions, monotone, strata independent of
    the group given W; principal fairness enforced when ``enforce_pf``
    (default: a fair coin).
    ``"theorem3"``: covariate-based decisions, monotone.
    """
    if family not in ("theorem1", "theorem2", "theorem3"):
        raise ValueError(f"unknown family {family!r}")
    n_groups = int(rng.integers(1, 4))
    n_w = int(rng.integers(1, 3))
    n_x = int(rng.integers(1, 5))
    groups = [f"g{i}" for i in range(n_groups)]
    ws = [f"w{i}" for i in range(n_w)]
    monotone = family in ("theorem2", "theorem3")

    def strata_row():
        if monotone:
            p = _simplex(rng, 3)
            return {"safe": p[0], "preventable": p[1], "backlash": 0.0, "dangerous": p[2]}
        return dict(zip(STRATUM_LABELS, _simplex(rng, 4)))

    def rate_row():
        return dict(zip(STRATUM_LABELS, rng.random(4).tolist()))

    group_probs = dict(zip(groups, _simplex(rng, n_groups)))
    w_probs = {a: _labelled("w", _simplex(rng, n_w)) for a in groups}
    x_probs = {a: {w: _labelled("x", _simplex(rng, n_x)) for w in ws} for a in groups}
    if family == "theorem3":
        stratum_probs = {a: {w: strata_row() for w in ws} for a in groups}
        decision = DecisionModel("covariate", _labelled("x", rng.random(n_x).tolist()))
        pf = False
    else:
        shared = {w: strata_row() for w in ws}
        stratum_probs = {a: {w: dict(shared[w]) for w in ws} for a in groups}
        pf = True if family == "theorem1" else (bool(rng.integers(0, 2)) if enforce_pf is None else enforce_pf)
        if pf:
            shared_rates = {w: rate_row() for w in ws}
            rates = {a: {w: dict(shared_rates[w]) for w in ws} for a in groups}
        else:
            rates = {a: {w: rate_row() for w in ws} for a in groups}
        decision = DecisionModel("stratum", rates)
    return validate_spec(
        DgpSpec(
            group_probs=group_probs,
            stratum_probs=stratum_probs,
            decision=decision,
            w_probs=w_probs,
            x_probs=x_probs,
            enforce_assumption1=family != "theorem3",
            enforce_monotonicity=monotone,
            enforce_pf=pf,
        )
    )


def suite_rng(seed, theorem, index) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(theorem, index))))


def run_suite(theorems=(1, 2, 3), count=100, seed=0, tol=1e-9) -> dict:
    """Check each requested theorem on ``count`` random specs of its family.

    Returns ``{theorem: [TheoremCheck, ...]}``.
    """
    count = check_positive_int(count, "count")
    out = {}
    for t in theorems:
        if t not in THEOREM_CHECKS:
            raise ValueError(f"unknown theorem {t!r}")
        checks = []
        for i in range(count):
            spec = random_spec(suite_rng(seed, t, i), f"theorem{t}")
            checks.append(THEOREM_CHECKS[t](spec, tol))
        out[t] = checks
    return out
