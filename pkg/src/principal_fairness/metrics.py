"""Principal fairness and the three statistical fairness criteria.

Every disparity is the largest absolute difference of a conditional
probability between any two groups.  Cells whose conditioning event has no
mass are undefined: they are reported as flags and left out of the maxima.
"""

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ._validation import check_nonnegative
from .core import STRATA, ObservedTable, PotentialOutcomeTable, PrincipalStratum


class EmptyGroupError(ValueError):
    """A group has no units, so its conditional probabilities do not exist."""


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)


def _max_pairwise(values) -> float:
    """Largest |a - b| over pairs of defined (non-NaN) entries; 0 without pairs."""
    defined = [float(v) for v in values if not np.isnan(v)]
    best = 0.0
    for a, b in itertools.combinations(defined, 2):
        best = max(best, abs(a - b))
    return best


@dataclass(frozen=True)
class StratumDecisionRates:
    """``rates[g, s]`` = Pr(D=1 | R=STRATA[s], A=groups[g]); NaN where undefined."""

    groups: tuple
    rates: np.ndarray

    def rate(self, group, stratum: PrincipalStratum) -> Optional[float]:
        value = self.rates[self.groups.index(str(group)), stratum.index]
        return None if np.isnan(value) else float(value)

    def undefined(self) -> list:
        return [
            (g, s) for gi, g in enumerate(self.groups) for s in STRATA if np.isnan(self.rates[gi, s.index])
        ]


def principal_rates(table: PotentialOutcomeTable) -> StratumDecisionRates:
    counts = np.asarray(table.counts, dtype=float)
    return StratumDecisionRates(table.groups, _ratio(counts[:, :, 1], counts.sum(axis=2)))


@dataclass(frozen=True)
class PrincipalDisparity:
    per_stratum: Mapping[PrincipalStratum, float]
    max_disparity: float

    def holds(self, epsilon=0.0) -> bool:
        return self.max_disparity <= epsilon


def pf_disparity(rates: StratumDecisionRates) -> PrincipalDisparity:
    per = {s: _max_pairwise(rates.rates[:, s.index]) for s in STRATA}
    return PrincipalDisparity(per, max(per.values()))


@dataclass(frozen=True)
class CriterionResult:
    """Per-group conditional probabilities for one criterion.

    ``values[(group, arm)]`` holds the probability, or None when undefined.
    For overall parity the single arm is ``None``; for calibration arms are
    decisions, for accuracy they are outcomes.
    """

    name: str
    conditioning: Optional[str]
    values: Mapping[tuple, Optional[float]]
    disparities: Mapping[Optional[int], float]
    undefined: tuple = ()

    @property
    def max_disparity(self) -> float:
        return max(self.disparities.values(), default=0.0)

    def passed(self, epsilon) -> bool:
        return self.max_disparity <= epsilon

    def value(self, group, arm=None) -> Optional[float]:
        return self.values[(str(group), arm)]


def _criterion(name, conditioning, groups, matrix, arms) -> CriterionResult:
    values, disparities, undefined = {}, {}, []
    for j, arm in enumerate(arms):
        column = matrix[:, j]
        for g, v in zip(groups, column):
            values[(g, arm)] = None if np.isnan(v) else float(v)
            if np.isnan(v):
                undefined.append((g, arm))
        disparities[arm] = _max_pairwise(column)
    return CriterionResult(name, conditioning, values, disparities, tuple(undefined))


def overall_parity(observed: ObservedTable) -> CriterionResult:
    """Pr(D=1 | A) per group."""
    counts = np.asarray(observed.counts, dtype=float)
    totals = counts.sum(axis=(1, 2))
    empty = [g for g, t in zip(observed.groups, totals) if t <= 0]
    if empty:
        raise EmptyGroupError(f"group {empty[0]!r} has no units")
    rates = (counts[:, 1, :].sum(axis=1) / totals)[:, None]
    return _criterion("overall_parity", None, observed.groups, rates, (None,))


def calibration(observed: ObservedTable) -> CriterionResult:
    """Pr(Y=1 | D, A) per group and decision arm."""
    counts = np.asarray(observed.counts, dtype=float)
    rates = _ratio(counts[:, :, 1], counts.sum(axis=2))
    return _criterion("calibration", "decision", observed.groups, rates, (0, 1))


def accuracy(observed: ObservedTable) -> CriterionResult:
    """Pr(D=1 | Y, A) per group and outcome arm."""
    counts = np.asarray(observed.counts, dtype=float)
    rates = _ratio(counts[:, 1, :], counts.sum(axis=1))
    return _criterion("accuracy", "outcome", observed.groups, rates, (0, 1))


CRITERIA = ("overall_parity", "calibration", "accuracy")


@dataclass(frozen=True)
class DisparityReport:
    epsilon: float
    criteria: Mapping[str, CriterionResult]

    @property
    def passed(self) -> dict:
        return {name: c.passed(self.epsilon) for name, c in self.criteria.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    @property
    def max_disparity(self) -> float:
        return max(c.max_disparity for c in self.criteria.values())

    def to_dict(self) -> dict:
        out = {"epsilon": self.epsilon, "criteria": {}}
        for name, c in self.criteria.items():
            arms = {}
            for (g, arm), v in c.values.items():
                arms.setdefault(_arm_label(arm), {})[g] = v
            out["criteria"][name] = {
                "conditioning": c.conditioning,
                "values": arms,
                "disparity": {_arm_label(a): d for a, d in c.disparities.items()},
                "max_disparity": c.max_disparity,
                "passed": c.passed(self.epsilon),
                "undefined_cells": [f"{g}|{_arm_label(a)}" for g, a in c.undefined],
            }
        return out


def _arm_label(arm) -> str:
    return "all" if arm is None else str(arm)


def evaluate_all(observed: ObservedTable, epsilon: float) -> DisparityReport:
    epsilon = check_nonnegative(epsilon, "epsilon")
    return DisparityReport(
        epsilon,
        {
            "overall_parity": overall_parity(observed),
            "calibration": calibration(observed),
            "accuracy": accuracy(observed),
        },
    )


@dataclass(frozen=True)
class ConditionalDisparityReport:
    """Criteria evaluated separately inside each conditioning cell of W."""

    epsilon: float
    cells: Mapping[tuple, DisparityReport] = field(default_factory=dict)

    def max_disparity(self, criterion) -> float:
        return max((r.criteria[criterion].max_disparity for r in self.cells.values()), default=0.0)

    @property
    def passed(self) -> dict:
        return {c: self.max_disparity(c) <= self.epsilon for c in CRITERIA}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


def _drop_empty_groups(table: ObservedTable) -> ObservedTable:
    keep = table.group_totals() > 0
    if keep.all():
        return table
    groups = tuple(g for g, k in zip(table.groups, keep) if k)
    return ObservedTable(groups, table.counts[keep])


def evaluate_conditional(tables: Mapping[tuple, ObservedTable], epsilon: float) -> ConditionalDisparityReport:
    """Evaluate all criteria per W-cell.

    Groups absent from a cell are dropped from that cell rather than
    treated as errors: the conditional criteria only compare groups that
    share the cell.
    """
    epsilon = check_nonnegative(epsilon, "epsilon")
    return ConditionalDisparityReport(
        epsilon, {cell: evaluate_all(_drop_empty_groups(t), epsilon) for cell, t in tables.items()}
    )
