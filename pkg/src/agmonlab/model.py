"""Model configuration: semi-classical parameters plus catalog choices."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .catalog import SCALAR_IDS, VECTOR_IDS, sample_scalar, sample_vector
from .grid import Grid, ScalarField, VectorField, build_grid


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to assemble ``(hD - mu A)^2 + V`` on a box.

    ``hole_radius`` > 0 turns the box into an annulus by clamping the disk
    around the origin. ``links`` selects how edge integrals of ``A`` are
    formed: ``"midpoint"`` (Peierls midpoint rule) or ``"exact"`` (analytic
    line integrals where the catalog provides them).
    """

    h: float
    mu: float = 0.0
    potential: str = "harmonic"
    potential_params: dict[str, Any] = field(default_factory=dict)
    vector_potential: str = "zero"
    vector_params: dict[str, Any] = field(default_factory=dict)
    lower: tuple[float, ...] = (-1.0,)
    upper: tuple[float, ...] = (1.0,)
    points: tuple[int, ...] = (65,)
    hole_radius: float = 0.0
    links: str = "midpoint"
    boundary_condition: str = "dirichlet"

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"h must be positive, got {self.h}")
        if not (np.isfinite(self.mu) and self.mu >= 0):
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if self.potential not in SCALAR_IDS:
            raise ValueError(f"unknown potential id {self.potential!r}")
        if self.vector_potential not in VECTOR_IDS:
            raise ValueError(f"unknown vector potential id {self.vector_potential!r}")
        if self.links not in ("midpoint", "exact"):
            raise ValueError(f"links must be 'midpoint' or 'exact', got {self.links!r}")
        if self.boundary_condition != "dirichlet":
            raise ValueError("only Dirichlet boundary conditions are supported")
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))
        object.__setattr__(self, "points", tuple(int(v) for v in np.atleast_1d(self.points)))
        self.grid()  # validates the grid parameters

    def grid(self) -> Grid:
        g = build_grid(self.lower, self.upper, self.points)
        if self.hole_radius > 0:
            g = g.with_disk_excluded(self.hole_radius)
        return g

    def sample_potential(self, grid: Grid | None = None) -> ScalarField:
        return sample_scalar(self.potential, self.potential_params, grid or self.grid())

    def sample_vector_potential(self, grid: Grid | None = None) -> VectorField:
        return sample_vector(self.vector_potential, self.vector_params, grid or self.grid())

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)
