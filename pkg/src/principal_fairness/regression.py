"""Estimators of the outcome regression Pr(Y=1 | D, X).

Both estimators follow the scikit-learn conventions: hyperparameters go in
``__init__``, ``fit(X, y)`` learns, fitted state lives in trailing-underscore
attributes.  Column 0 of ``X`` is the binary decision; the remaining columns
are covariates.  :meth:`predict_outcome` evaluates the regression at a fixed
decision for covariate rows that do not carry a decision column.
"""

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from ._validation import check_binary, check_binary_array, check_is_fitted, check_nonnegative, check_positive_int
from .core import Dataset


class SeparationError(RuntimeError):
    """Logistic fit diverges because the outcome is (quasi-)separable."""


def _as_design(X):
    X = np.asarray(X, dtype=object)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError(f"X must be 2-D with the decision in column 0, got shape {X.shape}")
    return X


def _row_keys(X) -> list:
    if X.shape[1] == 0:
        return [()] * X.shape[0]
    return list(zip(*(X[:, j].tolist() for j in range(X.shape[1]))))


def covariate_design(dataset: Dataset, include_group=True):
    """Covariate matrix (without the decision) and per-column kinds."""
    s = dataset.schema
    cols = [dataset.covariates[c] for c in s.covariate_cols]
    kinds = [dataset.covariate_types[c] for c in s.covariate_cols]
    names = list(s.covariate_cols)
    if include_group:
        cols.append(dataset.group)
        kinds.append("categorical")
        names.append(s.group_col)
    X = np.empty((dataset.n, len(cols)), dtype=object)
    for j, col in enumerate(cols):
        X[:, j] = col
    return X, kinds, names


def outcome_design(dataset: Dataset, include_group=True):
    """Full regression design: decision in column 0, then covariates."""
    Xc, kinds, names = covariate_design(dataset, include_group)
    X = np.empty((dataset.n, Xc.shape[1] + 1), dtype=object)
    X[:, 0] = dataset.decision
    X[:, 1:] = Xc
    return X, kinds, ["decision"] + names


class FrequencyOutcomeRegression(BaseEstimator):
    """Saturated cell-mean regression with additive smoothing.

    ``Pr(Y=1 | D=d, X=x) = (#{Y=1, D=d, X=x} + alpha) / (#{D=d, X=x} + 2 alpha)``
    where ``x`` ranges over the distinct covariate rows seen in training.
    With ``alpha = 0`` an empty (d, x) cell predicts NaN, which downstream
    code reports as a small-cell problem.

    Parameters
    ----------
    alpha : float, default=0.0
        Pseudo-count added to both outcome classes in every cell.
    """

    kind = "frequency"

    def __init__(self, alpha=0.0):
        self.alpha = alpha

    def fit(self, X, y, sample_weight=None):
        alpha = check_nonnegative(self.alpha, "alpha")
        X = _as_design(X)
        d = check_binary_array(X[:, 0].astype(float), "decision column")
        y = check_binary_array(y, "y")
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)

        index = {}
        cell = np.fromiter(
            (index.setdefault(k, len(index)) for k in _row_keys(X[:, 1:])), dtype=np.intp, count=len(y)
        )
        n_cells = len(index)
        self.cell_index_ = index
        self.totals_ = np.zeros((2, n_cells))
        self.positives_ = np.zeros((2, n_cells))
        for dv in (0, 1):
            m = d == dv
            self.totals_[dv] = np.bincount(cell[m], weights=w[m], minlength=n_cells)
            self.positives_[dv] = np.bincount(cell[m], weights=(w * y)[m], minlength=n_cells)
        self.alpha_ = alpha
        self.n_features_in_ = X.shape[1]
        return self

    def predict_outcome(self, decision, X):
        """Pr(Y=1 | D=decision, X=row) for covariate rows ``X`` (no decision column)."""
        check_is_fitted(self, "cell_index_")
        d = check_binary(decision, "decision")
        X = np.asarray(X, dtype=object)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_ - 1:
            raise ValueError(f"expected {self.n_features_in_ - 1} covariate columns, got shape {X.shape}")
        ids = np.fromiter(
            (self.cell_index_.get(k, -1) for k in _row_keys(X)), dtype=np.intp, count=X.shape[0]
        )
        seen = ids >= 0
        pos = np.where(seen, self.positives_[d][ids], 0.0)
        tot = np.where(seen, self.totals_[d][ids], 0.0)
        den = tot + 2 * self.alpha_
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, (pos + self.alpha_) / np.where(den > 0, den, 1.0), np.nan)

    def predict_proba(self, X):
        X = _as_design(X)
        d = check_binary_array(X[:, 0].astype(float), "decision column")
        p = np.empty(X.shape[0])
        for dv in (0, 1):
            m = d == dv
            if m.any():
                p[m] = self.predict_outcome(dv, X[m, 1:])
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    @property
    def metadata(self) -> dict:
        check_is_fitted(self, "cell_index_")
        empty = int(((self.totals_ == 0)).sum())
        return {"kind": self.kind, "alpha": self.alpha_, "cells": len(self.cell_index_), "empty_cells": empty}


class LogisticOutcomeRegression(BaseEstimator):
    """Logistic regression of Y on the decision and covariates, fit by Newton/IRLS.

    The design is an intercept, the decision, each covariate (categorical
    columns one-hot encoded with the first sorted level dropped), and, when
    ``interactions`` is set, the products of the decision with every
    covariate column.  Zero-variance covariate columns are dropped.

    Parameters
    ----------
    max_iter : int, default=100
    tol : float, default=1e-8
        Convergence threshold on the largest absolute coefficient update.
    interactions : bool, default=True
    categorical : sequence of int or None
        Indices (into ``X``, decision at 0) of categorical columns.  When
        None, a column is numeric iff every value converts to float.
    separation_threshold : float, default=30.0
        A fit whose linear predictor exceeds this magnitude is treated as
        separated and aborted.
    """

    kind = "logistic"

    def __init__(self, max_iter=100, tol=1e-8, interactions=True, categorical=None, separation_threshold=30.0):
        self.max_iter = max_iter
        self.tol = tol
        self.interactions = interactions
        self.categorical = categorical
        self.separation_threshold = separation_threshold

    def _column_is_categorical(self, X, j):
        if self.categorical is not None:
            return j in set(self.categorical)
        try:
            X[:, j].astype(float)
            return False
        except (TypeError, ValueError):
            return True

    def _encode(self, X):
        parts, names = [], []
        for j, spec in zip(self._columns_, self._encoders_):
            if spec is None:
                parts.append(X[:, j].astype(float)[:, None])
                names.append(f"x{j}")
            else:
                vals = X[:, j]
                parts.append(np.column_stack([vals == lvl for lvl in spec]).astype(float))
                names.extend(f"x{j}={lvl}" for lvl in spec)
        cov = np.hstack(parts) if parts else np.empty((X.shape[0], 0))
        return cov, names

    def _design(self, decision, cov):
        d = np.asarray(decision, dtype=float)[:, None]
        blocks = [np.ones_like(d), d, cov]
        if self.interactions:
            blocks.append(d * cov)
        return np.hstack(blocks)

    def fit(self, X, y, sample_weight=None):
        max_iter = check_positive_int(self.max_iter, "max_iter")
        X = _as_design(X)
        d = check_binary_array(X[:, 0].astype(float), "decision column")
        y = check_binary_array(y, "y").astype(float)
        sw = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)

        self._columns_ = list(range(1, X.shape[1]))
        self._encoders_ = []
        for j in self._columns_:
            if self._column_is_categorical(X, j):
                levels = sorted(set(X[:, j].tolist()), key=str)
                self._encoders_.append(levels[1:])
            else:
                self._encoders_.append(None)
        cov, names = self._encode(X)
        keep = cov.std(axis=0) > 0 if cov.shape[0] else np.zeros(cov.shape[1], dtype=bool)
        self._keep_ = keep
        cov = cov[:, keep]
        names = [n for n, k in zip(names, keep) if k]
        Z = self._design(d, cov)
        self.feature_names_ = ["intercept", "decision", *names] + (
            [f"decision*{n}" for n in names] if self.interactions else []
        )

        beta = np.zeros(Z.shape[1])
        converged = False
        n_iter = 0
        for n_iter in range(1, max_iter + 1):
            p = expit(Z @ beta)
            w = sw * p * (1 - p)
            grad = Z.T @ (sw * (y - p))
            hess = Z.T @ (w[:, None] * Z)
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            beta = beta + step
            if np.max(np.abs(Z @ beta)) > self.separation_threshold:
                raise SeparationError(
                    "logistic fit diverged (outcome separable by the design); "
                    "use the frequency estimator with smoothing (alpha > 0) instead"
                )
            if np.max(np.abs(step)) < self.tol:
                converged = True
                break
        self.coef_ = beta
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = _as_design(X)
        cov, _ = self._encode(X)
        return self._design(X[:, 0].astype(float), cov[:, self._keep_]) @ self.coef_

    def predict_outcome(self, decision, X):
        d = check_binary(decision, "decision")
        X = np.asarray(X, dtype=object)
        full = np.empty((X.shape[0], X.shape[1] + 1), dtype=object)
        full[:, 0] = d
        full[:, 1:] = X
        return expit(self.decision_function(full))

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    @property
    def metadata(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "kind": self.kind,
            "iterations": self.n_iter_,
            "converged": bool(self.converged_),
            "tol": self.tol,
            "max_iter": self.max_iter,
            "interactions": bool(self.interactions),
        }


def _check_discrete(dataset: Dataset, include_group):
    for col in dataset.schema.covariate_cols:
        if dataset.covariate_types[col] == "numeric":
            values = dataset.covariates[col]
            if not np.all(np.floor(values) == values):
                raise ValueError(
                    f"covariate {col!r} is continuous; the frequency estimator needs "
                    "categorical or discretized covariates (use the logistic estimator)"
                )


def fit_frequency_regression(dataset: Dataset, alpha=0.0, include_group=True) -> FrequencyOutcomeRegression:
    """Fit the saturated frequency estimator on ``dataset``."""
    _check_discrete(dataset, include_group)
    X, _, names = outcome_design(dataset, include_group)
    reg = FrequencyOutcomeRegression(alpha=alpha).fit(X, dataset.outcome, sample_weight=dataset.weights)
    reg.include_group_ = include_group
    reg.feature_names_in_ = np.array(names, dtype=object)
    return reg


def fit_logistic_regression(
    dataset: Dataset, max_iter=100, tol=1e-8, interactions=True, include_group=True
) -> LogisticOutcomeRegression:
    """Fit the logistic estimator with the dataset's covariate types."""
    X, kinds, names = outcome_design(dataset, include_group)
    categorical = [j + 1 for j, k in enumerate(kinds) if k == "categorical"]
    reg = LogisticOutcomeRegression(
        max_iter=max_iter, tol=tol, interactions=interactions, categorical=categorical
    ).fit(X, dataset.outcome, sample_weight=dataset.weights)
    reg.include_group_ = include_group
    reg.feature_names_in_ = np.array(names, dtype=object)
    return reg
