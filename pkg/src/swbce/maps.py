"""Validation helpers for the two map kinds used throughout the package.

A soft map is a 2-D float64 array with values in [0, 1]; a binary map is a
2-D array whose values are exactly 0 or 1.  Both are plain numpy arrays, the
helpers only check and normalise dtype.
"""

import numpy as np

from .errors import DimensionMismatch, InvalidMap


def as_soft_map(values, name="map"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidMap(f"{name}: expected a non-empty 2-D map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidMap(f"{name}: values must lie in [0, 1]")
    return arr


def as_binary_map(values, name="map"):
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidMap(f"{name}: expected a non-empty 2-D map, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise InvalidMap(f"{name}: values must be exactly 0 or 1")
        arr = arr.astype(bool)
    return arr


def check_same_shape(a, b, what="prediction and ground truth"):
    if a.shape != b.shape:
        raise DimensionMismatch(f"{what} differ in shape: {a.shape} vs {b.shape}")
