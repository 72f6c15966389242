# app/services/numerics.py
"""Dense float64 matrix helpers and seeded random streams.

Matrices are plain 2-D ``numpy`` float64 arrays. Every public helper checks
shapes up front and refuses to return non-finite values.

Random streams come from ``PCG64`` seeded through ``SeedSequence(seed,
spawn_key=(stream_id,))``: stream 0 belongs to the server, stream ``d + 1``
to device ``d``, and higher ids are reserved for data generation and the
condition simulator. The same (seed, stream_id, call sequence) produces the
same numbers on every platform.
"""
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from app.utils.error_handling import ShapeMismatchError
from app.utils.validation import ensure_finite

Matrix = NDArray[np.float64]

SERVER_STREAM = 0
DATA_STREAM = 1_000_000
CONDITIONS_STREAM_BASE = 2_000_000


def device_stream(device_id: int) -> int:
    return device_id + 1


def as_matrix(data, name: str = "matrix") -> Matrix:
    array = np.array(data, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise ShapeMismatchError(f"{name} must be a non-empty 2-D array, got shape {array.shape}")
    return ensure_finite(array, name)


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return ensure_finite(a @ b, "matmul")


def axpy(alpha: float, x: Matrix, y: Matrix) -> Matrix:
    """Return ``alpha * x + y``."""
    if x.shape != y.shape:
        raise ShapeMismatchError(f"axpy shapes differ: {x.shape} vs {y.shape}")
    return ensure_finite(alpha * x + y, "axpy")


@dataclass
class SeededRng:
    """One independent, single-owner random stream."""

    seed: int
    stream_id: int = SERVER_STREAM
    _generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def normal(self, std: float, shape: tuple[int, ...]) -> NDArray[np.float64]:
        return self._generator.normal(0.0, std, size=shape)

    def uniform(self, low: float, high: float) -> float:
        return float(self._generator.uniform(low, high))

    def integers(self, high: int, size: int) -> NDArray[np.int64]:
        return self._generator.integers(0, high, size=size)

    def permutation(self, n: int) -> NDArray[np.int64]:
        return self._generator.permutation(n)

    def shuffle(self, array: np.ndarray) -> None:
        self._generator.shuffle(array)

    def dirichlet(self, alpha: Sequence[float]) -> NDArray[np.float64]:
        return self._generator.dirichlet(alpha)

    def multinomial(self, n: int, probabilities: Sequence[float]) -> NDArray[np.int64]:
        return self._generator.multinomial(n, probabilities)

    def choice(self, options: Sequence[float]) -> float:
        return float(options[int(self._generator.integers(0, len(options)))])


def gaussian(rng: SeededRng, rows: int, cols: int, std: float) -> Matrix:
    """I.i.d. N(0, std^2) entries; std == 0 still advances the stream."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    return ensure_finite(rng.normal(std, (rows, cols)), "gaussian")
