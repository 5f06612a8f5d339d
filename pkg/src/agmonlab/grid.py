"""Tensor grids and grid-sampled fields.

Grids are node-centred, include their boundary layer and index axes in
``ij`` order, so ``values[i, j]`` sits at ``(x1[i], x2[j])``. The last axis
plays the role of ``x_d`` (the reflection axis of double-well models).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Grid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]
    excluded: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.points)):
            raise ValueError("bounds and points must have one entry per axis")
        if self.dim not in (1, 2):
            raise ValueError(f"only 1D and 2D grids are supported, got dim={self.dim}")
        for lo, up, n in zip(self.lower, self.upper, self.points):
            if not (np.isfinite(lo) and np.isfinite(up)):
                raise ValueError("grid bounds must be finite")
            if not up > lo:
                raise ValueError(f"upper bound {up} must exceed lower bound {lo}")
            if int(n) != n or n < 3:
                raise ValueError(f"need at least 3 points per axis, got {n}")
        if self.excluded is not None:
            ex = np.asarray(self.excluded, dtype=bool)
            if ex.shape != self.shape:
                raise ValueError("excluded mask has wrong shape")
            ex.setflags(write=False)
            object.__setattr__(self, "excluded", ex)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.points)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((up - lo) / (n - 1) for lo, up, n in zip(self.lower, self.upper, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(lo, up, n) for lo, up, n in zip(self.lower, self.upper, self.points))

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def boundary(self) -> np.ndarray:
        """Outermost layer of nodes."""
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    @property
    def dirichlet(self) -> np.ndarray:
        """Nodes clamped to zero: the boundary layer plus any excluded region."""
        if self.excluded is None:
            return self.boundary
        return self.boundary | self.excluded

    @property
    def interior(self) -> np.ndarray:
        return ~self.dirichlet

    def with_excluded(self, mask: np.ndarray) -> "Grid":
        mask = np.asarray(mask, dtype=bool)
        if self.excluded is not None:
            mask = mask | self.excluded
        return Grid(self.lower, self.upper, self.points, excluded=mask)

    def with_disk_excluded(self, radius: float, center: Sequence[float] | None = None) -> "Grid":
        """Annulus realisation: Dirichlet nodes on the closed disk ``|x - c| <= radius``."""
        center = np.zeros(self.dim) if center is None else np.asarray(center, float)
        r2 = sum((c - c0) ** 2 for c, c0 in zip(self.coords(), center))
        return self.with_excluded(r2 <= radius**2)

    def is_symmetric(self, axis: int = -1, atol: float = 1e-12) -> bool:
        """True when the grid is mirror symmetric about 0 along ``axis`` with a node on 0."""
        axis = axis % self.dim
        lo, up, n = self.lower[axis], self.upper[axis], self.points[axis]
        return abs(lo + up) <= atol * max(1.0, abs(up)) and n % 2 == 1

    def same_as(self, other: "Grid") -> bool:
        if self is other:
            return True
        if (self.lower, self.upper, self.points) != (other.lower, other.upper, other.points):
            return False
        return np.array_equal(self.dirichlet, other.dirichlet)

    def nearest_node(self, x: Sequence[float]) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for k in range(self.dim):
            i = int(round((x[k] - self.lower[k]) / self.spacing[k]))
            idx.append(min(max(i, 0), self.points[k] - 1))
        return tuple(idx)

    def node_position(self, index: Sequence[int]) -> np.ndarray:
        return np.array([self.lower[k] + index[k] * self.spacing[k] for k in range(self.dim)])

    def refine(self) -> "Grid":
        """Halve the spacing; every old node is a node of the new grid."""
        if self.excluded is not None:
            raise ValueError("refine a grid before excluding regions")
        return Grid(self.lower, self.upper, tuple(2 * n - 1 for n in self.points))

    def sub_box(self, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
        """Node mask of the closed box ``[lower, upper]``."""
        mask = np.ones(self.shape, dtype=bool)
        eps = 1e-9 * min(self.spacing)
        for c, lo, up in zip(self.coords(), lower, upper):
            mask &= (c >= lo - eps) & (c <= up + eps)
        return mask


def build_grid(lower, upper, points) -> Grid:
    """Build a grid from per-axis bounds and node counts (scalars allowed in 1D)."""
    lower = tuple(float(v) for v in np.atleast_1d(lower))
    upper = tuple(float(v) for v in np.atleast_1d(upper))
    pts = np.atleast_1d(points)
    if len(pts) == 1 and len(lower) > 1:
        pts = np.repeat(pts, len(lower))
    for p in pts:
        if float(p) != int(p):
            raise ValueError(f"points must be integers, got {p}")
    return Grid(lower, upper, tuple(int(p) for p in pts))


def _check_grid(grid: Grid, values: np.ndarray, lead: tuple[int, ...] = ()) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != lead + grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {lead + grid.shape}")
    return values


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray
    nonnegative: bool = False

    def __post_init__(self):
        v = _check_grid(self.grid, np.asarray(self.values, dtype=float))
        v = np.array(v, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class VectorField:
    """Real d-vector per node.

    ``func`` evaluates the field at arbitrary points (used for edge midpoints);
    ``line_integral`` returns the exact integral along straight segments
    ``start -> end`` when one is known analytically.
    """

    grid: Grid
    values: np.ndarray
    func: Optional[Callable[..., tuple[np.ndarray, ...]]] = field(default=None, compare=False)
    line_integral: Optional[Callable[[tuple, tuple], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        v = np.array(_check_grid(self.grid, np.asarray(self.values, dtype=float), (self.grid.dim,)), dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def norm_squared(self) -> np.ndarray:
        return np.sum(self.values**2, axis=0)


@dataclass(frozen=True)
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(_check_grid(self.grid, np.asarray(self.values)), dtype=complex)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def inner(grid: Grid, u: np.ndarray, w: np.ndarray) -> complex:
    """Node-quadrature inner product ``sum conj(u) w dV``."""
    return complex(np.vdot(u, w) * grid.cell_volume)


def norm(grid: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(u) ** 2) * grid.cell_volume))
