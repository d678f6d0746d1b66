"""Uniform periodic grids on the flat torus ``[0, 1)^dim``."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument


def min_image(d, N: int):
    """Minimal periodic representative of integer offsets modulo ``N``.

    Values land in ``(-N/2, N/2]``, so an antipodal offset on an even grid is
    reported as positive.
    """
    r = np.mod(d, N)
    return np.where(r > N // 2, r - N, r)


def periodic_distance(x, y) -> np.ndarray:
    """Euclidean norm of the per-coordinate minimal periodic differences."""
    delta = np.abs(np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), 1.0))
    delta = np.minimum(delta, 1.0 - delta)
    if delta.ndim == 0:
        return float(delta)
    return np.sqrt(np.sum(delta * delta, axis=-1))


@dataclass(frozen=True)
class TorusGrid:
    """``N`` equispaced nodes per dimension; node ``i`` sits at ``i / N``."""

    dim: int
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidArgument("dim must be 1 or 2")
        if self.N < 2:
            raise InvalidArgument("N must be at least 2")
        assert Fraction(1, self.N) * self.N == 1

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    def multi_index(self, flat):
        """Integer coordinates ``(..., dim)`` of flat node indices."""
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def flat_index(self, multi):
        multi = np.mod(np.asarray(multi), self.N)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape)

    def coords(self, flat=None) -> np.ndarray:
        """Node positions, shape ``(size, dim)`` (or matching ``flat``)."""
        if flat is None:
            flat = np.arange(self.size)
        return self.multi_index(flat) * self.h

    def displacement(self, src, dst) -> np.ndarray:
        """Minimal periodic integer offset from node ``src`` to node ``dst``."""
        return min_image(self.multi_index(dst) - self.multi_index(src), self.N)

    def distance(self, a, b) -> np.ndarray:
        """Periodic distance between flat node indices."""
        off = self.displacement(a, b) * self.h
        return np.sqrt(np.sum(off * off, axis=-1))

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn`` on node coordinates and reshape to the grid."""
        return np.asarray(fn(self.coords()), dtype=float).reshape(self.shape)


@dataclass
class ValueFunction:
    """Grid samples of ``u(., t)`` stored on the fundamental domain."""

    grid: TorusGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise InvalidArgument(f"expected {self.grid.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("value function must be finite")
        self.values = v.reshape(self.grid.shape)
        if self.time < 0:
            raise InvalidArgument("time must be nonnegative")

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def from_function(cls, grid: TorusGrid, fn, time: float = 0.0) -> "ValueFunction":
        return cls(grid, grid.sample(fn), time)
