# app/utils/validation.py
import math

import numpy as np

from app.utils.error_handling import NumericalError

# Values within this distance of an integer are treated as that integer
# before ceil/floor, so 8.000000000001 does not round up to 9.
INTEGER_TOLERANCE = 1e-9


def tolerant_ceil(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) <= INTEGER_TOLERANCE:
        return int(nearest)
    return math.ceil(value)


def tolerant_floor(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) <= INTEGER_TOLERANCE:
        return int(nearest)
    return math.floor(value)


def ensure_finite(array: np.ndarray, operation: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"{operation} produced non-finite values")
    return array


def is_nondecreasing(values) -> bool:
    return all(a <= b for a, b in zip(values, values[1:]))
