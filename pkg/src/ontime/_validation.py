"""Input validation helpers shared by the estimators and metrics."""

from numbers import Real

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an input has no usable direction or no items to work on."""


def check_vector(x, *, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float64 array, optionally of length ``dim``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_matrix(X, *, dim=None, name="X", allow_empty=False):
    """Return ``X`` as a finite 2-D float64 array with ``dim`` columns."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0 and allow_empty:
        arr = arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise DegenerateInputError(f"{name} is empty")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has {arr.shape[1]} columns, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_unit_interval(value, name):
    if not isinstance(value, Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_positive(value, name):
    if not isinstance(value, Real) or not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return value


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def frozen(arr, dtype=np.float64):
    """Copy ``arr`` into a read-only array."""
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out
