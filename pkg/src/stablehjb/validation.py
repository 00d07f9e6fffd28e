"""Small input-validation helpers used across the package."""

import numpy as np


def check_open_interval(value, lo, hi, name):
    """Require lo < value < hi, naming the violated bound."""
    value = float(value)
    if not lo < value < hi:
        raise ValueError(f"{name} must lie in the open interval ({lo}, {hi}), got {value}")
    return value


def check_positive(value, name):
    value = float(value)
    if not value > 0.0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_nonnegative(value, name):
    value = float(value)
    if not value >= 0.0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_positive_int(value, name):
    if int(value) != value or int(value) < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def as_point(x, n_modes, name="x"):
    """Coerce to a finite float vector of length n_modes."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n_modes,):
        raise ValueError(f"{name} must have shape ({n_modes},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def as_batch(x, n_modes, name="x"):
    """Coerce to (n_points, n_modes); a single point becomes a 1-row batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_modes:
        raise ValueError(f"{name} must have trailing dimension {n_modes}, got shape {x.shape}")
    return x
