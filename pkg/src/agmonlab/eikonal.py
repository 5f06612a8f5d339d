"""Agmon weights from the degenerate eikonal equation ``|grad Phi| = c``.

First-order fast marching with a binary heap. Sources are whole sublevel
sets (distance to a set, Phi = 0 on it); speeds are node samples and the
local update uses the mean of the node speed and the upwind neighbour
speeds, which makes 1D actions exact up to the trapezoidal rule.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .catalog import write_field_csv
from .grid import Grid, ScalarField, VectorField


class GeodesicError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceSet:
    grid: Grid
    members: np.ndarray
    level: float
    components: int

    @property
    def count(self) -> int:
        return int(self.members.sum())


@dataclass(frozen=True)
class WeightField:
    phi: ScalarField
    speed: ScalarField | None
    source: SourceSet | None
    order: np.ndarray | None = field(default=None, repr=False)
    clamped: int = 0

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    @property
    def values(self) -> np.ndarray:
        return self.phi.values

    @property
    def composite(self) -> bool:
        return self.speed is None

    def to_csv(self, path) -> None:
        write_field_csv(path, self.grid, {"Phi": self.values})


def _make_source(grid: Grid, members: np.ndarray, level: float) -> SourceSet:
    members = np.asarray(members, dtype=bool)
    if not members.any():
        raise ValueError(f"empty source set at level {level}")
    _, ncomp = ndimage.label(members)
    members = members.copy()
    members.setflags(write=False)
    return SourceSet(grid, members, float(level), int(ncomp))


def sublevel_set(g: ScalarField, level: float) -> SourceSet:
    """Nodes with ``g <= level``."""
    return _make_source(g.grid, g.values <= level, level)


def point_source(grid: Grid, x) -> SourceSet:
    members = np.zeros(grid.shape, dtype=bool)
    members[grid.nearest_node(x)] = True
    return _make_source(grid, members, float("nan"))


def solve_eikonal(speed, source: SourceSet) -> WeightField:
    """Fast-marching solution of ``|grad Phi| = speed`` with ``Phi = 0`` on the source.

    Negative speeds are clamped to zero and counted. Nodes are frozen in
    non-decreasing order of Phi; heap ties are broken by flat node index.
    """
    grid = source.grid
    c = np.array(speed.values if isinstance(speed, ScalarField) else speed, dtype=float)
    if c.shape != grid.shape:
        raise ValueError("speed does not match the source grid")
    clamped = int(np.sum(c < 0))
    c = np.maximum(c, 0.0)

    shape = grid.shape
    dim = grid.dim
    n = grid.size
    strides = [int(np.prod(shape[k + 1:])) for k in range(dim)]
    spacing = grid.spacing
    cf = c.ravel()
    phi = np.full(n, np.inf)
    frozen = np.zeros(n, dtype=bool)
    src = np.flatnonzero(source.members.ravel())
    phi[src] = 0.0
    frozen[src] = True
    order = list(src)

    idx_nd = np.indices(shape).reshape(dim, n)

    def neighbours(i):
        for k in range(dim):
            ik = idx_nd[k, i]
            if ik > 0:
                yield k, i - strides[k]
            if ik < shape[k] - 1:
                yield k, i + strides[k]

    def update(i):
        # best upwind value and its neighbour speed per axis
        best = [(math.inf, 0.0)] * dim
        for k, j in neighbours(i):
            if frozen[j] and phi[j] < best[k][0]:
                best[k] = (phi[j], cf[j])
        cand = sorted((b[0], b[1], spacing[k]) for k, b in enumerate(best) if b[0] < math.inf)
        if not cand:
            return math.inf
        a, cn, dx = cand[0]
        ceff = 0.5 * (cf[i] + cn)
        val = a + ceff * dx
        if len(cand) == 2 and val > cand[1][0]:
            b, cm, dy = cand[1]
            ceff = 0.5 * cf[i] + 0.25 * (cn + cm)
            # (val-a)^2/dx^2 + (val-b)^2/dy^2 = ceff^2
            wa, wb = 1.0 / dx**2, 1.0 / dy**2
            qa = wa + wb
            qb = -2.0 * (a * wa + b * wb)
            qc = a * a * wa + b * b * wb - ceff * ceff
            disc = qb * qb - 4 * qa * qc
            if disc >= 0:
                cand_val = (-qb + math.sqrt(disc)) / (2 * qa)
                if cand_val >= b:
                    val = cand_val
                else:
                    val = min(val, b + ceff * dy)
            else:
                val = min(val, b + ceff * dy)
        return val

    heap: list[tuple[float, int]] = []
    for i in src:
        for _, j in neighbours(i):
            if not frozen[j]:
                v = update(j)
                if v < phi[j]:
                    phi[j] = v
                    heapq.heappush(heap, (v, j))
    last = 0.0
    while heap:
        v, i = heapq.heappop(heap)
        if frozen[i] or v > phi[i]:
            continue
        if v < last - 1e-12 * max(1.0, last):
            raise AssertionError("fast marching lost causality")
        last = v
        frozen[i] = True
        order.append(i)
        for _, j in neighbours(i):
            if not frozen[j]:
                nv = update(j)
                if nv < phi[j]:
                    phi[j] = nv
                    heapq.heappush(heap, (nv, j))
    return WeightField(ScalarField(grid, phi.reshape(shape)), ScalarField(grid, c), source,
                       np.asarray(order, dtype=np.int64), clamped)


def _speed_from_square(sq: np.ndarray) -> tuple[np.ndarray, int]:
    return np.sqrt(np.maximum(sq, 0.0)), int(np.sum(sq < 0))


def agmon_phi0(V: ScalarField, lambda0: float) -> WeightField:
    """Distance to ``{V <= lambda0}`` in the metric ``(V - lambda0)_+ dx^2``."""
    speed, _ = _speed_from_square(V.values - lambda0)
    return solve_eikonal(ScalarField(V.grid, speed), sublevel_set(V, lambda0))


def agmon_phi1(A: VectorField, mu: float, gap: float) -> WeightField:
    """Magnetic weight: metric ``(mu^2 |A|^2 - gap)_+ dx^2`` from ``{mu^2|A|^2 <= gap}``."""
    if gap < 0:
        raise ValueError(f"gap must be non-negative, got {gap}")
    a2 = ScalarField(A.grid, mu**2 * A.norm_squared())
    speed, _ = _speed_from_square(a2.values - gap)
    return solve_eikonal(ScalarField(A.grid, speed), sublevel_set(a2, gap))


def _check_pair(a: WeightField, b: WeightField):
    if not a.grid.same_as(b.grid):
        raise ValueError("weights live on different grids")


def combine_max(phi0: WeightField, phi1: WeightField) -> WeightField:
    _check_pair(phi0, phi1)
    return WeightField(ScalarField(phi0.grid, np.maximum(phi0.values, phi1.values)), None, None)


def combine_min(phi_l: WeightField, phi_r: WeightField) -> WeightField:
    _check_pair(phi_l, phi_r)
    return WeightField(ScalarField(phi_l.grid, np.minimum(phi_l.values, phi_r.values)), None, None)


def point_distance(phi: WeightField, x) -> float:
    return float(phi.values[phi.grid.nearest_node(x)])


def well_to_well(V: ScalarField, lam: float, x_from, x_to) -> float:
    """Agmon distance at energy ``lam`` between the nodes nearest two points."""
    speed, _ = _speed_from_square(V.values - lam)
    w = solve_eikonal(ScalarField(V.grid, speed), point_source(V.grid, x_from))
    return point_distance(w, x_to)


def gradient_magnitude(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """Upwind |grad Phi| (one-sided difference towards the smaller neighbour)."""
    return np.sqrt(sum(g**2 for g in _upwind_gradient(phi, grid)))


def _upwind_gradient(phi: np.ndarray, grid: Grid) -> list[np.ndarray]:
    out = []
    for k in range(grid.dim):
        dx = grid.spacing[k]
        p = np.moveaxis(phi, k, 0)
        back = np.full_like(p, np.inf)
        fwd = np.full_like(p, np.inf)
        back[1:] = p[:-1]
        fwd[:-1] = p[1:]
        use_back = back <= fwd
        nb = np.where(use_back, back, fwd)
        d = np.where(np.isfinite(nb), (p - nb) / dx, 0.0)
        d = np.maximum(d, 0.0)
        g = np.where(use_back, d, -d)
        out.append(np.moveaxis(g, 0, k))
    return out


def _interp(grid: Grid, arrays: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of several node arrays at point ``x``."""
    base = []
    frac = []
    for k in range(grid.dim):
        s = (x[k] - grid.lower[k]) / grid.spacing[k]
        i = int(min(max(math.floor(s), 0), grid.points[k] - 2))
        base.append(i)
        frac.append(min(max(s - i, 0.0), 1.0))
    out = np.zeros(len(arrays))
    for corner in np.ndindex(*(2,) * grid.dim):
        w = 1.0
        idx = []
        for k, b in enumerate(corner):
            w *= frac[k] if b else 1.0 - frac[k]
            idx.append(base[k] + b)
        if w:
            out += w * np.array([a[tuple(idx)] for a in arrays])
    return out


def trace_geodesic(phi: WeightField, endpoint, max_steps: int | None = None):
    """Steepest descent on Phi from ``endpoint`` into the source set.

    Returns ``(points, action)`` where ``points`` is an ``(m, dim)`` polyline
    starting at the endpoint node and ``action`` is ``int c dl`` along it.
    """
    grid = phi.grid
    if phi.source is None or phi.speed is None:
        raise ValueError("geodesics need a solved (non-composite) weight field")
    node = grid.nearest_node(endpoint)
    if phi.source.members[node]:
        raise ValueError("endpoint must lie outside the source set")
    if not phi.values[node] > 0:
        raise GeodesicError(f"endpoint {list(endpoint)} sits on a zero-speed plateau")
    grads = _upwind_gradient(phi.values, grid)
    speed = phi.speed.values
    step = 0.5 * min(grid.spacing)
    if max_steps is None:
        max_steps = 40 * sum(grid.points)
    x = grid.node_position(node)
    pts = [x.copy()]
    action = 0.0
    c_prev = _interp(grid, [speed], x)[0]
    for _ in range(max_steps):
        if phi.source.members[grid.nearest_node(x)]:
            break
        g = _interp(grid, grads, x)
        gn = float(np.linalg.norm(g))
        if gn < 1e-12:
            raise GeodesicError(f"degenerate plateau at {x.tolist()}: gradient {gn:.3e}")
        x_new = x - step * g / gn
        lo = np.array(grid.lower)
        hi = np.array(grid.upper)
        x_new = np.minimum(np.maximum(x_new, lo), hi)
        c_new = _interp(grid, [speed], x_new)[0]
        action += 0.5 * (c_prev + c_new) * float(np.linalg.norm(x_new - x))
        x, c_prev = x_new, c_new
        pts.append(x.copy())
    else:
        raise GeodesicError("geodesic did not reach the source set")
    return np.array(pts), action


def path_action(grid: Grid, speed: np.ndarray, points: np.ndarray) -> float:
    """``int c dl`` along a polyline by the trapezoidal rule."""
    cs = np.array([_interp(grid, [speed], p)[0] for p in points])
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return float(np.sum(0.5 * (cs[1:] + cs[:-1]) * seg))
