"""Input validation helpers used by the estimators and the CLI."""

import numpy as np

from .exceptions import SchemaError


def check_array(X, name="X", ndim=2, dtype=np.float64, allow_empty=False):
    """Coerce to a float64 ndarray and validate dimensionality.

    Raises ValueError for wrong rank or empty input, and for non-finite
    entries, which never mean anything good this deep in the pipeline.
    """
    X = np.asarray(X, dtype=dtype)
    if X.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {X.shape}")
    if not allow_empty and X.size == 0:
        raise ValueError(f"{name} is empty")
    if dtype is not None and not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_labels(y, n_samples, name="y"):
    """Validate an integer label vector aligned with X."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if y.shape[0] != n_samples:
        raise ValueError(
            f"{name} has {y.shape[0]} entries but X has {n_samples} rows"
        )
    if not np.issubdtype(y.dtype, np.integer):
        y_int = y.astype(np.int64)
        if not np.array_equal(y_int, y):
            raise ValueError(f"{name} must contain integer labels")
        y = y_int
    return y.astype(np.int64)


def check_condition(y, n_samples):
    """Accept int labels (1-d) or a prebuilt condition matrix (2-d floats).

    Returns ("labels", y) or ("matrix", C).
    """
    arr = np.asarray(y)
    if arr.ndim == 1:
        return "labels", check_labels(arr, n_samples)
    if arr.ndim == 2:
        C = check_array(arr, name="condition matrix")
        if C.shape[0] != n_samples:
            raise ValueError(
                f"condition matrix has {C.shape[0]} rows but X has {n_samples}"
            )
        return "matrix", C
    raise ValueError(f"condition must be 1-d labels or a 2-d matrix, got shape {arr.shape}")


def check_feature_count(X, expected, what="model"):
    """Raise SchemaError when X's feature count disagrees with the model."""
    if X.shape[1] != expected:
        raise SchemaError(
            f"{what} expects {expected} features, input has {X.shape[1]}"
        )


def check_is_fitted(estimator, attribute):
    """Minimal fitted-state check compatible with sklearn's exception type."""
    from sklearn.exceptions import NotFittedError

    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. "
            "Call 'fit' before using this estimator."
        )
