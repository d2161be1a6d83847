"""Small input-checking helpers shared by the estimators and table classes."""

import numbers

import numpy as np


def check_binary(value, name="value"):
    """Return ``value`` as an int in {0, 1} or raise ValueError."""
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, numbers.Integral) and value in (0, 1):
        return int(value)
    if isinstance(value, numbers.Real) and float(value) in (0.0, 1.0):
        return int(value)
    raise ValueError(f"{name} must be 0 or 1, got {value!r}")


def check_binary_array(values, name="values"):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        bad = arr[~np.isin(arr, (0, 1))][0]
        raise ValueError(f"{name} must contain only 0 and 1, found {bad!r}")
    return arr.astype(np.int8)


def check_nonnegative(value, name="value"):
    if not isinstance(value, numbers.Real) or np.isnan(value) or value < 0:
        raise ValueError(f"{name} must be a nonnegative number, got {value!r}")
    return float(value)


def check_probability(value, name="probability"):
    if not isinstance(value, numbers.Real) or not 0.0 <= float(value) <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_positive_int(value, name="value"):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_open_unit(value, name="value"):
    if not isinstance(value, numbers.Real) or not 0.0 < float(value) < 1.0:
        raise ValueError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return float(value)


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        from sklearn.exceptions import NotFittedError

        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call fit first."
        )
