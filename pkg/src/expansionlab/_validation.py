"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_points(x) -> np.ndarray:
    """2-D finite float64 copy of ``x`` (one row per point)."""
    return np.array(
        check_array(x, dtype=np.float64, ensure_2d=True, ensure_all_finite=True, ensure_min_samples=1),
        copy=True,
    )


def check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, numbers.Integral):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return int(seed)


def check_labeling(assignment, n: int, num_classes: int) -> np.ndarray:
    """Validate a total labeling of ``n`` points into ``range(num_classes)``."""
    a = np.asarray(assignment)
    if a.ndim != 1 or a.shape[0] != n:
        raise ValueError(f"labeling must have shape ({n},), got {a.shape}")
    if a.size and not np.issubdtype(a.dtype, np.integer):
        raise ValueError("labeling must contain integers")
    a = a.astype(np.int64)
    if a.size and (a.min() < 0 or a.max() >= num_classes):
        raise ValueError(f"labeling classes must lie in [0, {num_classes})")
    return a


def check_index_set(indices, n: int) -> np.ndarray:
    """Sorted unique index array; raises on out-of-range members."""
    idx = np.unique(np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"index set has members outside [0, {n})")
    return idx


def check_probability(value, name: str, *, open_low=False, high=1.0) -> float:
    v = float(value)
    if not np.isfinite(v) or v < 0 or (open_low and v == 0) or v > high:
        raise ValueError(f"{name} must lie in {'(' if open_low else '['}0, {high}], got {value!r}")
    return v
