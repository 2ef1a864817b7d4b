"""Grids, seeded random streams and elementwise helpers.

An image grid is a 2-D ``float64`` numpy array. Row 0 is the top of the
image, i.e. the shallowest depth next to the probe. Functions that accept
grids also accept a leading batch axis unless stated otherwise.

Random streams use numpy's Philox4x64 counter-based generator keyed by a
``SeedSequence(seed, spawn_key=path)``. Normals come from numpy's ziggurat
transform. Do not swap the generator family: stored manifests and test
fixtures depend on it.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np


class DimensionError(ValueError):
    """Grid shapes are invalid or do not agree."""


class ParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class NumericDegenerateError(ArithmeticError):
    """A formula would divide by a (numerically) vanishing quantity."""


class RngStream:
    """Deterministic random stream identified by ``(seed, path)``.

    Two streams with the same seed and path produce the same sequence.
    Streams with different paths are independent (``SeedSequence`` spawn
    keys). A single stream must only be consumed by one thread.

    >>> a = RngStream(7, [0]).normal(3)
    >>> b = RngStream(7, [0]).normal(3)
    >>> bool((a == b).all())
    True
    """

    def __init__(self, seed: int, path: Iterable[int] = ()):
        seed = int(seed)
        path = tuple(int(p) for p in path)
        if seed < 0 or seed >= 2**64:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
        if any(p < 0 for p in path):
            raise ParameterError(f"stream path labels must be non-negative, got {path}")
        self.seed = seed
        self.path = path
        ss = np.random.SeedSequence(seed, spawn_key=path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *labels: int) -> "RngStream":
        """Fresh substream at ``path + labels``; does not advance ``self``."""
        return RngStream(self.seed, self.path + tuple(labels))

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high, size=None):
        """Integers on ``[low, high)``."""
        return self.generator.integers(low, high, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={list(self.path)})"


def _check_dims(height, width):
    if int(height) < 1 or int(width) < 1:
        raise DimensionError(f"grid dimensions must be positive, got {height}x{width}")


def grid_fill(height: int, width: int, value: float) -> np.ndarray:
    _check_dims(height, width)
    return np.full((int(height), int(width)), float(value), dtype=np.float64)


def hadamard(a, b) -> np.ndarray:
    """Pointwise product of two equally shaped grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def gaussian_field(rng: RngStream, height: int, width: int, count: int | None = None) -> np.ndarray:
    """I.i.d. standard normal grid, or a ``(count, height, width)`` stack."""
    _check_dims(height, width)
    shape = (int(height), int(width)) if count is None else (int(count), int(height), int(width))
    return rng.normal(shape)


def to_unit(x) -> np.ndarray:
    """Map model-space intensities ``[-1, 1]`` to metric-space ``[0, 1]``."""
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def to_signed(x) -> np.ndarray:
    """Map metric-space ``[0, 1]`` intensities to model-space ``[-1, 1]``."""
    return np.asarray(x, dtype=np.float64) * 2.0 - 1.0


def check_finite(x, what="grid"):
    if not np.all(np.isfinite(x)):
        raise NumericDegenerateError(f"{what} contains non-finite values")
    return x
