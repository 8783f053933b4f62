"""Trait-space discretization, density fields and quadrature.

Everything downstream (kernels, model right-hand sides, diagnostics) works on
a uniform 1-D lattice with composite trapezoid quadrature.  Second order is
enough because every verification target is tolerance-based, and uniformity
is what makes FFT convolution possible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, ExtinctionError


@dataclass(frozen=True)
class Grid:
    """Uniform trait lattice on [x_min, x_max] with n_points nodes."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if self.n_points < 3:
            raise ValueError(f"need n_points >= 3, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.x_min + self.spacing * np.arange(self.n_points)
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights (spacing, halved at the two ends)."""
        w = np.full(self.n_points, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        w.setflags(write=False)
        return w

    def node(self, i: int) -> float:
        return self.x_min + i * self.spacing

    def nearest_index(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.spacing))
        return min(max(i, 0), self.n_points - 1)


def quadrature(f, grid: Grid) -> float:
    """Composite trapezoid integral of nodal values f over the grid.

    Linear in f and exact for affine integrands.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n_points,):
        raise DimensionError(
            f"integrand has shape {f.shape}, grid has {grid.n_points} nodes"
        )
    return float(grid.weights @ f)


def _check_values(values, grid: Grid, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_points,):
        raise DimensionError(
            f"{what} has shape {values.shape}, grid has {grid.n_points} nodes"
        )
    if np.any(values < 0.0):
        worst = float(values.min())
        raise ValueError(f"{what} has negative entries (min {worst:.3e})")
    return values


class DensityState:
    """Nonnegative density field on a grid with its cached total mass."""

    __slots__ = ("grid", "values", "mass")

    def __init__(self, grid: Grid, values):
        values = _check_values(values, grid, "density").copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.mass = quadrature(values, grid)

    def __repr__(self):
        return f"DensityState(n_points={self.grid.n_points}, mass={self.mass:.6g})"

    def scaled(self, c: float) -> "DensityState":
        return DensityState(self.grid, c * self.values)


class ProbabilityState:
    """Density field whose quadrature equals 1 (within 1e-10 absolute)."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = _check_values(values, grid, "probability density").copy()
        total = quadrature(values, grid)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"probability mass is {total!r}, expected 1 within 1e-10")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"ProbabilityState(n_points={self.grid.n_points})"


def normalize(n: DensityState) -> ProbabilityState:
    """Divide a density by its mass; the profile q = n / rho."""
    if not n.mass > 0.0:
        raise ExtinctionError(f"cannot normalize: mass = {n.mass!r}")
    return ProbabilityState(n.grid, n.values / n.mass)


def moments(q: ProbabilityState) -> tuple[float, float]:
    """Mean trait and trait variance of a probability profile."""
    mean = quadrature(q.grid.nodes * q.values, q.grid)
    var = quadrature((q.grid.nodes - mean) ** 2 * q.values, q.grid)
    return mean, max(var, 0.0)


def grid_delta(grid: Grid, x0: float) -> DensityState:
    """Unit-mass spike on the single node nearest x0.

    The node value is 1/weight, so the quadrature is exactly 1 (this is
    1/spacing at interior nodes).
    """
    i = grid.nearest_index(x0)
    values = np.zeros(grid.n_points)
    values[i] = 1.0 / grid.weights[i]
    return DensityState(grid, values)


def gaussian_density(grid: Grid, mu: float, sigma: float) -> np.ndarray:
    """Nodal values of the Gaussian density with the given mean and std."""
    x = grid.nodes
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))
