"""Dense float64 linear algebra, masked softmax, seeded RNG and finite differences.

Matrices are plain 2-D ``numpy.float64`` arrays (C order); masks are 2-D
``bool`` arrays of the same shape. The two hot loops (``matmul`` and
``masked_row_softmax``) run in a compiled extension when it was built, and in
an equivalent pure-Python loop otherwise. Set ``ATTNBIAS_BACKEND=python`` to
force the fallback. Both backends accumulate left to right in ascending index
order, so results are bit-identical between them.
"""

from __future__ import annotations

import os
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

if os.environ.get("ATTNBIAS_BACKEND", "").lower() == "python" or _ckernels is None:
    _kernels = _pykernels
    BACKEND = "python"
else:
    _kernels = _ckernels
    BACKEND = "compiled"


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class EmptyNeighborhoodError(ValueError):
    """A row of a mask (or a vertex of a graph) has no kept entry."""

    def __init__(self, row: int, what: str = "row"):
        self.row = row
        super().__init__(f"{what} {row} has an empty neighborhood")


class NumericError(ArithmeticError):
    """A function evaluation produced a non-finite value."""


def as_matrix(a) -> np.ndarray:
    """Coerce to a contiguous 2-D float64 array with finite entries."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix contains non-finite values")
    return m


def as_mask(mask) -> np.ndarray:
    m = np.ascontiguousarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D mask, got shape {m.shape}")
    return m


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed ``sum_k a[i,k] * b[k,j]`` accumulation order."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return _kernels.matmul(a, b)


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).T)


def masked_row_softmax(scores, mask) -> np.ndarray:
    """Row-wise softmax restricted to ``mask``; masked entries come out as exactly 0.0.

    Masked scores are replaced by ``-inf`` and each row is shifted by the max
    over its kept entries before exponentiation.
    """
    scores = as_matrix(scores)
    mask = as_mask(mask)
    if scores.shape != mask.shape:
        raise ShapeError(f"scores {scores.shape} and mask {mask.shape} differ in shape")
    out, empty_row = _kernels.masked_row_softmax(scores, mask.view(np.uint8))
    if empty_row >= 0:
        raise EmptyNeighborhoodError(int(empty_row))
    return out


def central_difference_grad(
    f: Callable[[np.ndarray], float], at, h: float = 1e-5
) -> np.ndarray:
    """Element-wise central difference ``(f(x + h e_ij) - f(x - h e_ij)) / 2h``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(at, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


class Rng:
    """Seeded, splittable random stream.

    The stream is numpy's PCG64 bit generator (128-bit LCG state, XSL-RR
    output) initialised from ``SeedSequence(entropy=seed, spawn_key=key)``.
    ``split(i)`` appends ``i`` to the spawn key, so child streams depend only on
    the root seed and their path, never on how many draws the parent made.
    Doubles come from ``Generator.random`` (53-bit mantissa).
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key))
        )

    def split(self, index: int) -> "Rng":
        return Rng(self.seed, self.key + (index,))

    def random(self, shape=None):
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape: Tuple[int, ...]) -> np.ndarray:
        u = self._gen.random(shape)
        return low + (high - low) * u

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high]`` inclusive."""
        return int(self._gen.integers(low, high, endpoint=True))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bits(self, shape, p: float = 0.5) -> np.ndarray:
        return self._gen.random(shape) < p


def max_abs_diff(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare shapes {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def add_row(a, b: Optional[np.ndarray]) -> np.ndarray:
    """Broadcast-add a bias vector to every row (no-op when ``b`` is None)."""
    if b is None:
        return a
    return a + np.asarray(b, dtype=np.float64)[None, :]
