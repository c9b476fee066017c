"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import DataError, DegenerateLabelsError, DimensionMismatchError


def check_signal(x, name="x"):
    """Return ``x`` as a finite 1-D float64 array or raise DataError."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite samples")
    return arr


def check_signals(X, name="X"):
    """Normalise a batch of signals.

    A 2-D array is returned as a C-contiguous float64 matrix; a ragged
    sequence is returned as a list of 1-D arrays.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        arr = np.ascontiguousarray(X, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{name} contains non-finite samples")
        return arr
    signals = [check_signal(x, f"{name}[{i}]") for i, x in enumerate(X)]
    if signals and len({len(s) for s in signals}) == 1:
        return np.vstack(signals)
    return signals


def signal_lengths(X):
    if isinstance(X, np.ndarray):
        return [X.shape[1]] * X.shape[0]
    return [len(x) for x in X]


def check_labels(y, n=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise DataError(f"labels must be one-dimensional, got shape {y.shape}")
    if n is not None and len(y) != n:
        raise DimensionMismatchError(f"got {len(y)} labels for {n} rows")
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("labels must be binary (0 or 1)")
    return y.astype(np.int64)


def check_X_y(X, y, min_rows=1):
    """Validate a feature matrix and binary labels for classifier fitting."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("feature matrix contains non-finite entries")
    y = check_labels(y, X.shape[0])
    if X.shape[0] < min_rows:
        raise DataError(f"need at least {min_rows} rows, got {X.shape[0]}")
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError("training labels contain a single class")
    return X, y


def check_features(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[1] != n_features:
        raise DimensionMismatchError(
            f"model expects {n_features} features, got {X.shape[1]}"
        )
    return X
