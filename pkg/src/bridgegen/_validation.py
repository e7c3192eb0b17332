"""Input validation helpers used by the functional API and the estimators."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import NumericError, ShapeError, ValidationError


def as_points(X, dim=None, name="X", allow_empty=False):
    """Coerce ``X`` to a finite float64 matrix of shape (n, dim).

    A 1-D input is read as a single point.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        if not allow_empty:
            raise ValidationError(f"{name} is empty")
    else:
        try:
            X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        except ValueError as exc:
            raise NumericError(f"{name}: {exc}") from exc
    if dim is not None and X.shape[1] != dim:
        raise ShapeError(f"{name} has {X.shape[1]} columns, expected {dim}")
    return X


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a positive finite number, got {value}")
    return value


def check_count(value, name, minimum=0):
    if int(value) != value or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def check_stop_time(T):
    T = float(T)
    if not 0.0 < T < 1.0:
        raise ValidationError(f"stopping time T must lie in (0, 1), got {T}")
    return T
