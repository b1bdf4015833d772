"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


class SingularPointError(ValueError):
    """Raised when an evaluation point coincides with a point mass."""


def check_points(X, name="X"):
    """Coerce ``X`` to a float array of shape (n, 2).

    A single point ``(x, y)`` is promoted to shape (1, 2).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    X = check_array(X, dtype=float, ensure_2d=True, input_name=name)
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have two columns (x, y); got shape {X.shape}")
    return X


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_epsilon(eps, eps_max):
    """Validate ``0 < eps < eps_max``."""
    eps = check_positive(eps, "eps")
    if eps >= eps_max:
        raise ValueError(f"eps must satisfy 0 < eps < {eps_max:g}, got {eps:g}")
    return eps
