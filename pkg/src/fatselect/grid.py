"""Uniform 1-D grids and sampled log-density fields."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``N`` nodes on ``[-L, L]``."""

    L: float
    N: int

    def __post_init__(self):
        if self.N < 64:
            raise DomainError(f"grid needs N >= 64 nodes, got {self.N}")
        if not self.L > 0:
            raise DomainError("grid half-width L must be positive")

    @property
    def dx(self):
        return 2.0 * self.L / (self.N - 1)

    @property
    def x(self):
        x = np.linspace(-self.L, self.L, self.N)
        # exact symmetry about 0
        return 0.5 * (x - x[::-1])

    def trapezoid_weights(self):
        w = np.full(self.N, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def index_of(self, x0):
        return int(np.clip(np.rint((x0 + self.L) / self.dx), 0, self.N - 1))

    def window(self, half_width):
        """Boolean mask of nodes with ``|x| <= half_width``."""
        return np.abs(self.x) <= half_width + 1e-12 * self.L


@dataclass
class Field:
    """Log-density values ``u`` (so that ``n = exp(u/eps)``) on a grid at time ``t``."""

    grid: Grid1D
    values: np.ndarray
    t: float = 0.0
    floored: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N,):
            raise DomainError(f"field has shape {self.values.shape}, grid has {self.grid.N} nodes")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite")
        if self.t < 0:
            raise DomainError("time must be nonnegative")

    @property
    def x(self):
        return self.grid.x

    def valid_mask(self):
        if self.floored is None:
            return np.ones(self.grid.N, dtype=bool)
        return ~self.floored

    def density(self, eps):
        return np.exp(self.values / eps)

    def copy(self):
        return Field(self.grid, self.values.copy(), self.t,
                     None if self.floored is None else self.floored.copy())
