"""Plug-in identification of stratum-specific decision rates from observed data.

Under monotonicity (no backlash units) and unconfoundedness given the
regression covariates X, the stratum probabilities within a cell C (a
group, optionally crossed with a W-cell) are averages of the outcome
regression over the units of C::

    Pr(R=dangerous | C)   = mean_C Pr(Y=1 | D=1, X)
    Pr(R=safe | C)        = mean_C Pr(Y=0 | D=0, X)
    Pr(R=preventable | C) = mean_C Pr(Y=1 | D=0, X) - mean_C Pr(Y=1 | D=1, X)

and the decision rates follow as

    Pr(D=1 | safe, C)        = 1 - Pr(D=0, Y=0 | C) / Pr(safe | C)
    Pr(D=1 | preventable, C) = (mean_C Pr(Y=1|D=0,X) - Pr(Y=1 | C))
                               / (mean_C Pr(Y=1|D=0,X) - mean_C Pr(Y=1|D=1,X))
    Pr(D=1 | dangerous, C)   = Pr(D=1, Y=1 | C) / Pr(dangerous | C)

X should contain the group and every W column; the group is added to the
design by default.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator, clone

from ._validation import check_nonnegative, check_open_unit, check_positive_int
from .core import MONOTONE_STRATA, Dataset, PrincipalStratum, format_cell_value
from .regression import (
    SeparationError,
    covariate_design,
    fit_frequency_regression,
    fit_logistic_regression,
)

logger = logging.getLogger(__name__)

SAFE = PrincipalStratum.SAFE
PREVENTABLE = PrincipalStratum.PREVENTABLE
DANGEROUS = PrincipalStratum.DANGEROUS

DEFAULT_FLOOR = 1e-10
DEFAULT_TAU = 1e-9
DEFAULT_MIN_CELL_SIZE = 20

MODES = ("marginal", "conditional")


class UnidentifiableError(ValueError):
    """No stratum rate could be identified in any cell."""


def cell_label(condition_cols, w_cell) -> str:
    if w_cell is None or not condition_cols:
        return "all"
    return ",".join(f"{c}={format_cell_value(v)}" for c, v in zip(condition_cols, w_cell))


@dataclass(frozen=True)
class CellEstimate:
    """Identified quantities for one (group[, W-cell]).

    ``n`` counts records; for weighted population-level data it is the
    number of support atoms and small-cell checks are skipped.
    """

    group: str
    w_cell: Optional[tuple]
    n: int
    stratum_probabilities: Mapping[PrincipalStratum, float]
    raw_rates: Mapping[PrincipalStratum, Optional[float]]
    errors: Mapping[PrincipalStratum, str] = field(default_factory=dict)
    regression_undefined: bool = False

    @property
    def clipped_rates(self) -> dict:
        return {
            s: None if r is None else min(1.0, max(0.0, r)) for s, r in self.raw_rates.items()
        }

    def rate(self, stratum, clipped=False) -> Optional[float]:
        return (self.clipped_rates if clipped else self.raw_rates)[stratum]


@dataclass(frozen=True)
class IdentifiedEstimates:
    mode: str
    condition_cols: tuple
    cells: tuple
    floor: float
    weighted: bool = False

    def cell(self, group, w_cell=None) -> CellEstimate:
        for c in self.cells:
            if c.group == str(group) and c.w_cell == (tuple(w_cell) if w_cell is not None else None):
                return c
        raise KeyError((group, w_cell))

    @property
    def groups(self) -> tuple:
        return tuple(sorted({c.group for c in self.cells}))

    def fully_unidentified(self) -> bool:
        return all(all(r is None for r in c.raw_rates.values()) for c in self.cells)

    def flat(self, statistic="rates") -> dict:
        """Scalar quantities keyed ``group/cell/stratum/quantity``; None when unidentified."""
        out = {}
        for c in self.cells:
            prefix = f"{c.group}/{cell_label(self.condition_cols, c.w_cell)}"
            for s in MONOTONE_STRATA:
                if statistic in ("rates", "all"):
                    out[f"{prefix}/{s.label}/rate"] = c.raw_rates[s]
                if statistic in ("stratum_probabilities", "all"):
                    p = c.stratum_probabilities[s]
                    out[f"{prefix}/{s.label}/probability"] = None if np.isnan(p) else p
        return out

    def to_dict(self) -> dict:
        cells = []
        for c in self.cells:
            cells.append(
                {
                    "group": c.group,
                    "cell": cell_label(self.condition_cols, c.w_cell),
                    "n": c.n,
                    "stratum_probabilities": {
                        s.label: _none_if_nan(c.stratum_probabilities[s]) for s in MONOTONE_STRATA
                    },
                    "rates_raw": {s.label: c.raw_rates[s] for s in MONOTONE_STRATA},
                    "rates_clipped": {s.label: c.clipped_rates[s] for s in MONOTONE_STRATA},
                    "errors": {s.label: msg for s, msg in c.errors.items()},
                }
            )
        return {"mode": self.mode, "condition_cols": list(self.condition_cols), "cells": cells}


def _none_if_nan(x):
    return None if x is None or np.isnan(x) else float(x)


@dataclass(frozen=True)
class CellDiagnostics:
    group: str
    w_cell: Optional[tuple]
    negative_preventable: bool
    out_of_range: tuple
    floored: tuple
    small_cell: bool
    regression_undefined: bool

    @property
    def monotonicity_flag(self) -> bool:
        return self.negative_preventable or bool(self.out_of_range)

    @property
    def any_flag(self) -> bool:
        return self.monotonicity_flag or bool(self.floored) or self.small_cell or self.regression_undefined


@dataclass(frozen=True)
class Diagnostics:
    tau: float
    floor: float
    min_cell_size: int
    cells: tuple

    @property
    def any_monotonicity_flag(self) -> bool:
        return any(c.monotonicity_flag for c in self.cells)

    @property
    def any_flag(self) -> bool:
        return any(c.any_flag for c in self.cells)

    def to_dict(self, condition_cols=()) -> dict:
        return {
            "tolerances": {"tau": self.tau, "floor": self.floor, "min_cell_size": self.min_cell_size},
            "cells": [
                {
                    "group": c.group,
                    "cell": cell_label(condition_cols, c.w_cell),
                    "negative_preventable": c.negative_preventable,
                    "rates_out_of_range": [s.label for s in c.out_of_range],
                    "denominator_below_floor": [s.label for s in c.floored],
                    "small_cell": c.small_cell,
                    "regression_undefined": c.regression_undefined,
                }
                for c in self.cells
            ],
        }


def monotonicity_diagnostics(
    estimates: IdentifiedEstimates, tau=DEFAULT_TAU, min_cell_size=DEFAULT_MIN_CELL_SIZE
) -> Diagnostics:
    """Flag cells whose estimates contradict monotonicity.

    A cell is flagged when the estimated preventable probability is below
    ``-tau`` or any raw rate falls outside ``[-tau, 1 + tau]``.  Denominator
    floors, regression gaps and cells with fewer than ``min_cell_size``
    units are reported alongside.
    """
    tau = check_nonnegative(tau, "tau")
    cells = []
    for c in estimates.cells:
        p01 = c.stratum_probabilities[PREVENTABLE]
        out = tuple(
            s for s in MONOTONE_STRATA if c.raw_rates[s] is not None and not -tau <= c.raw_rates[s] <= 1 + tau
        )
        cells.append(
            CellDiagnostics(
                group=c.group,
                w_cell=c.w_cell,
                negative_preventable=bool(not np.isnan(p01) and p01 < -tau),
                out_of_range=out,
                floored=tuple(s for s in MONOTONE_STRATA if s in c.errors and not c.regression_undefined),
                small_cell=(not estimates.weighted and c.n < min_cell_size) or c.regression_undefined,
                regression_undefined=c.regression_undefined,
            )
        )
    return Diagnostics(tau, estimates.floor, min_cell_size, tuple(cells))


def _regression_means(dataset: Dataset, reg):
    X, _, _ = covariate_design(dataset, getattr(reg, "include_group_", True))
    return reg.predict_outcome(0, X), reg.predict_outcome(1, X)


def _cell_masks(dataset: Dataset, mode):
    groups = dataset.group_labels
    if mode == "marginal":
        for g in groups:
            yield g, None, dataset.group == g
        return
    cells, codes = dataset.condition_codes()
    for g in groups:
        gm = dataset.group == g
        for i, cell in enumerate(cells):
            m = gm & (codes == i)
            if m.any():
                yield g, cell, m


def _estimate_cell(dataset, mask, p0, p1, floor):
    w = dataset.unit_weights[mask]
    total = math.fsum(w)
    if total <= 0:
        raise ValueError("empty cell")
    d = dataset.decision[mask]
    y = dataset.outcome[mask]
    # Correctly rounded sums keep the cancellation in the preventable
    # formula from amplifying accumulated rounding error.
    joint = np.array(
        [[math.fsum(w[(d == dv) & (y == yv)]) / total for yv in (0, 1)] for dv in (0, 1)]
    )

    q0 = p0[mask]
    q1 = p1[mask]
    mean0 = math.fsum(w * q0) / total  # E{Pr(Y=1 | D=0, X) | C}
    mean1 = math.fsum(w * q1) / total  # E{Pr(Y=1 | D=1, X) | C}
    probs = {
        SAFE: math.fsum(w * (1.0 - q0)) / total,
        PREVENTABLE: mean0 - mean1,
        DANGEROUS: mean1,
    }
    undefined = bool(np.isnan(mean0) or np.isnan(mean1))
    pr_y1 = joint[0, 1] + joint[1, 1]

    rates, errors = {}, {}
    formulas = {
        SAFE: lambda: 1.0 - joint[0, 0] / probs[SAFE],
        PREVENTABLE: lambda: (mean0 - pr_y1) / (mean0 - mean1),
        DANGEROUS: lambda: joint[1, 1] / probs[DANGEROUS],
    }
    for s in MONOTONE_STRATA:
        den = probs[s]
        if undefined:
            rates[s] = None
            errors[s] = "regression undefined for some units (empty training cell); rate unidentified"
        elif abs(den) < floor:
            rates[s] = None
            errors[s] = f"no mass in stratum {s.label}; rate unidentified"
        else:
            rates[s] = float(formulas[s]())
    return probs, rates, errors, undefined


def stratum_probabilities(dataset: Dataset, reg, group, w_cell=None) -> dict:
    """Estimated Pr(R=r | A=group[, W=w_cell]) for the three monotone strata."""
    mode = "marginal" if w_cell is None else "conditional"
    p0, p1 = _regression_means(dataset, reg)
    target = (str(group), None if w_cell is None else tuple(w_cell))
    for g, cell, mask in _cell_masks(dataset, mode):
        if (g, cell) == target:
            return _estimate_cell(dataset, mask, p0, p1, DEFAULT_FLOOR)[0]
    raise ValueError(f"cell {target} has no units")


def identify_rates(
    dataset: Dataset,
    reg,
    mode="marginal",
    floor=DEFAULT_FLOOR,
    tau=DEFAULT_TAU,
    min_cell_size=DEFAULT_MIN_CELL_SIZE,
):
    """Plug-in estimates of Pr(D=1 | R, A[, W]) with diagnostics.

    ``mode="conditional"`` forms cells from the exact values of the
    dataset's condition columns.  Strata whose denominator is below
    ``floor`` in absolute value are reported as unidentified for that cell.

    Returns
    -------
    (IdentifiedEstimates, Diagnostics)
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "conditional":
        for col in dataset.schema.condition_cols:
            values = dataset.covariates[col]
            if dataset.covariate_types[col] == "numeric" and not np.all(np.floor(values) == values):
                raise ValueError(f"condition column {col!r} must be discretized")
    floor = check_nonnegative(floor, "floor")
    p0, p1 = _regression_means(dataset, reg)
    cells = []
    for g, cell, mask in _cell_masks(dataset, mode):
        probs, rates, errors, undefined = _estimate_cell(dataset, mask, p0, p1, floor)
        cells.append(
            CellEstimate(
                group=g,
                w_cell=cell,
                n=int(mask.sum()),
                stratum_probabilities=probs,
                raw_rates=rates,
                errors=errors,
                regression_undefined=undefined,
            )
        )
    estimates = IdentifiedEstimates(
        mode=mode,
        condition_cols=dataset.schema.condition_cols if mode == "conditional" else (),
        cells=tuple(cells),
        floor=floor,
        weighted=dataset.weights is not None,
    )
    return estimates, monotonicity_diagnostics(estimates, tau, min_cell_size)


class PrincipalFairnessEstimator(BaseEstimator):
    """Estimate stratum-specific decision rates from an observational dataset.

    Parameters
    ----------
    estimator : {"frequency", "logistic"}, default="frequency"
        Outcome regression used for the plug-in.
    alpha : float, default=0.0
        Smoothing for the frequency estimator.
    max_iter, tol, interactions
        Logistic estimator settings.
    include_group : bool, default=True
        Add the protected attribute to the regression design.
    mode : {"marginal", "conditional"}, default="marginal"
        Conditional mode identifies rates within cells of the dataset's
        condition columns.
    floor, tau, min_cell_size
        Denominator floor, monotonicity tolerance, small-cell threshold.

    Attributes
    ----------
    regression_ : fitted outcome regression
    estimates_ : IdentifiedEstimates
    diagnostics_ : Diagnostics
    """

    def __init__(
        self,
        estimator="frequency",
        alpha=0.0,
        max_iter=100,
        tol=1e-8,
        interactions=True,
        include_group=True,
        mode="marginal",
        floor=DEFAULT_FLOOR,
        tau=DEFAULT_TAU,
        min_cell_size=DEFAULT_MIN_CELL_SIZE,
    ):
        self.estimator = estimator
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.interactions = interactions
        self.include_group = include_group
        self.mode = mode
        self.floor = floor
        self.tau = tau
        self.min_cell_size = min_cell_size

    def _fit_regression(self, dataset):
        if self.estimator == "frequency":
            return fit_frequency_regression(dataset, alpha=self.alpha, include_group=self.include_group)
        if self.estimator == "logistic":
            return fit_logistic_regression(
                dataset,
                max_iter=self.max_iter,
                tol=self.tol,
                interactions=self.interactions,
                include_group=self.include_group,
            )
        raise ValueError(f"estimator must be 'frequency' or 'logistic', got {self.estimator!r}")

    def fit(self, dataset: Dataset, y=None):
        self.regression_ = self._fit_regression(dataset)
        self.estimates_, self.diagnostics_ = identify_rates(
            dataset,
            self.regression_,
            mode=self.mode,
            floor=self.floor,
            tau=self.tau,
            min_cell_size=self.min_cell_size,
        )
        return self

    def rate(self, group, stratum, w_cell=None, clipped=False):
        return self.estimates_.cell(group, w_cell).rate(stratum, clipped=clipped)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lower: Optional[float]
    upper: Optional[float]
    n_ok: int
    n_failed: int
    available: bool


@dataclass(frozen=True)
class BootstrapResult:
    replicates: int
    level: float
    seed: int
    statistic: str
    intervals: Mapping[str, Interval]
    failed_replicates: int

    def to_dict(self) -> dict:
        return {
            "replicates": self.replicates,
            "level": self.level,
            "seed": self.seed,
            "statistic": self.statistic,
            "failed_replicates": self.failed_replicates,
            "intervals": {
                k: {
                    "lower": v.lower,
                    "upper": v.upper,
                    "available": v.available,
                    "failures": v.n_failed,
                }
                for k, v in sorted(self.intervals.items())
            },
        }


def replicate_rng(seed, replicate) -> np.random.Generator:
    """PCG64 stream for replicate ``r``: a pure function of (seed, r)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(replicate,))))


def _run_replicate(dataset, estimator, seed, r, statistic, groups):
    rng = replicate_rng(seed, r)
    idx = rng.integers(0, dataset.n, size=dataset.n)
    sample = dataset.take(idx)
    if sample.group_labels != groups:
        return None
    try:
        fitted = clone(estimator).fit(sample)
    except (ValueError, SeparationError) as exc:
        logger.debug("bootstrap replicate %d failed: %s", r, exc)
        return None
    return fitted.estimates_.flat(statistic)


def bootstrap(
    dataset: Dataset,
    B,
    seed,
    statistic="rates",
    level=0.95,
    estimator: Optional[PrincipalFairnessEstimator] = None,
    n_jobs=1,
    max_failure_fraction=0.2,
) -> BootstrapResult:
    """Percentile bootstrap intervals for the identified quantities.

    Units are resampled with replacement from the whole dataset, the
    regression is refit and the rates re-identified for every replicate.
    A replicate that loses a group, fails to fit, or leaves a quantity
    unidentified counts as failed for the affected quantities; an interval
    with more than ``max_failure_fraction`` failed replicates is marked
    unavailable.  Results do not depend on ``n_jobs``.
    """
    B = check_positive_int(B, "B")
    level = check_open_unit(level, "level")
    if statistic not in ("rates", "stratum_probabilities", "all"):
        raise ValueError(f"unknown statistic {statistic!r}")
    estimator = PrincipalFairnessEstimator() if estimator is None else estimator
    keys = sorted(clone(estimator).fit(dataset).estimates_.flat(statistic))
    groups = dataset.group_labels

    def work(r):
        return _run_replicate(dataset, estimator, seed, r, statistic, groups)

    if n_jobs == 1:
        results = [work(r) for r in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, range(B)))

    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    intervals = {}
    for key in keys:
        values = [res[key] for res in results if res is not None and res.get(key) is not None]
        failed = B - len(values)
        available = failed <= max_failure_fraction * B and len(values) > 0
        if available:
            lo, hi = np.quantile(np.array(values), [lo_q, hi_q])
            intervals[key] = Interval(float(lo), float(hi), len(values), failed, True)
        else:
            intervals[key] = Interval(None, None, len(values), failed, False)
    return BootstrapResult(
        replicates=B,
        level=level,
        seed=seed,
        statistic=statistic,
        intervals=intervals,
        failed_replicates=sum(res is None for res in results),
    )
