"""Dense float64 matrix helpers and the seeded generator used everywhere else.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The random
stream comes from numpy's PCG64 bit generator, whose output sequence for a
given seed is fixed by numpy's stability policy and does not depend on the
platform.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


def as_matrix(values, cols: int | None = None) -> np.ndarray:
    """Coerce ``values`` into a 2D float64 array (a 1D input becomes one column)."""
    a = np.asarray(values, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if cols is None else a.reshape(-1, cols)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2D matrix, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=DTYPE)


class Rng:
    """Single-owner seeded random stream (PCG64)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, n: int | tuple[int, ...]) -> np.ndarray:
        """``n`` draws from U[lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
        return self._gen.uniform(lo, hi, n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, offset: int) -> "Rng":
        """An independent stream derived from this seed, e.g. one per growth stage."""
        return Rng(self.seed * 1_000_003 + offset)
