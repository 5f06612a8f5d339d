"""Matrix-free gauge-covariant discretisation of ``(hD - mu A)^2 + V``.

The kinetic part is the Peierls stencil: on the edge ``j -> j + e_k`` the
neighbour value is multiplied by ``exp(-i mu/h * int_edge A . dl)``, so a
lattice gauge change ``u -> exp(i mu chi/h) u`` is an exact symmetry when
the edge integrals change by ``chi(end) - chi(start)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .catalog import add_gradient, gauge_function
from .grid import ComplexField, Grid, ScalarField, VectorField
from .model import ModelConfig

DENSE_LIMIT = 64 * 64


def _edge_slices(dim: int, axis: int):
    lo = [slice(None)] * dim
    hi = [slice(None)] * dim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def edge_integrals(A: VectorField, rule: str = "midpoint") -> list[np.ndarray]:
    """Integral of ``A . dl`` along every forward edge, one array per axis."""
    grid = A.grid
    xs = grid.coords()
    out = []
    for k in range(grid.dim):
        lo, hi = _edge_slices(grid.dim, k)
        dx = grid.spacing[k]
        if rule == "exact" and A.line_integral is not None:
            start = tuple(x[lo] for x in xs)
            end = tuple(x[hi] for x in xs)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.asarray(A.line_integral(start, end), dtype=float)
        elif A.func is not None:
            mid = tuple(0.5 * (x[lo] + x[hi]) for x in xs)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.asarray(A.func(*mid)[k], dtype=float) * dx
        else:
            val = 0.5 * (A.values[k][lo] + A.values[k][hi]) * dx
        val = np.broadcast_to(val, tuple(n - (1 if i == k else 0) for i, n in enumerate(grid.shape)))
        # edges touching the flux tube never act on non-zero data
        out.append(np.nan_to_num(np.array(val, dtype=float), nan=0.0, posinf=0.0, neginf=0.0))
    return out


@dataclass(frozen=True, eq=False)
class MagneticOperator:
    grid: Grid
    V: ScalarField
    A: VectorField | None
    h: float
    mu: float
    phases: tuple[np.ndarray, ...]

    @property
    def hopping(self) -> tuple[float, ...]:
        """Kinetic coupling ``h^2 / dx_k^2`` per axis."""
        return tuple(self.h**2 / dx**2 for dx in self.grid.spacing)

    @property
    def is_real(self) -> bool:
        return all(np.all(np.imag(p) == 0) for p in self.phases)

    def diagonal(self) -> np.ndarray:
        return self.V.values + 2.0 * sum(self.hopping)

    def norm_bound(self) -> float:
        """Gershgorin bound on the operator norm."""
        v = np.abs(self.V.values[self.grid.interior])
        return float(v.max() + 4.0 * sum(self.hopping))

    def apply(self, u) -> np.ndarray:
        """Apply to an array of shape ``grid.shape + batch`` (or a ComplexField)."""
        if isinstance(u, ComplexField):
            if not u.grid.same_as(self.grid):
                raise ValueError("field lives on a different grid")
            u = u.values
        u = np.asarray(u)
        g = self.grid
        if u.shape[: g.dim] != g.shape:
            raise ValueError(f"array shape {u.shape} does not match grid {g.shape}")
        extra = u.ndim - g.dim
        inside = g.interior.reshape(g.shape + (1,) * extra)
        dtype = np.result_type(u.dtype, complex if not self.is_real else float)
        u = np.where(inside, u, 0).astype(dtype, copy=False)
        vv = self.V.values.reshape(g.shape + (1,) * extra)
        out = vv * u
        for k, t in enumerate(self.hopping):
            lo, hi = _edge_slices(g.dim, k)
            p = self.phases[k].reshape(self.phases[k].shape + (1,) * extra)
            if self.is_real:
                p = p.real
            out[lo] += t * (u[lo] - p * u[hi])
            out[hi] += t * (u[hi] - np.conj(p) * u[lo])
        out[~g.interior] = 0
        return out

    def __call__(self, u):
        return self.apply(u)

    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.grid.interior.ravel())

    def to_sparse(self) -> sp.csr_matrix:
        """Assembled matrix on interior nodes (ordered by flat grid index)."""
        g = self.grid
        idx = -np.ones(g.size, dtype=np.int64)
        interior = self.interior_index()
        idx[interior] = np.arange(interior.size)
        idx = idx.reshape(g.shape)
        rows = [np.arange(interior.size)]
        cols = [np.arange(interior.size)]
        vals = [self.diagonal().ravel()[interior].astype(complex)]
        for k, t in enumerate(self.hopping):
            lo, hi = _edge_slices(g.dim, k)
            a, b = idx[lo].ravel(), idx[hi].ravel()
            p = self.phases[k].ravel()
            keep = (a >= 0) & (b >= 0)
            a, b, p = a[keep], b[keep], p[keep]
            rows += [a, b]
            cols += [b, a]
            vals += [-t * p, -t * np.conj(p)]
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(interior.size, interior.size)).tocsr()
        return m.real.tocsr() if self.is_real else m

    def dense(self) -> np.ndarray:
        """Dense assembly, test-oracle sized grids only."""
        n = self.interior_index().size
        if n > DENSE_LIMIT:
            raise ValueError(f"dense assembly limited to {DENSE_LIMIT} unknowns, got {n}")
        return self.to_sparse().toarray()

    def scatter(self, x: np.ndarray) -> np.ndarray:
        """Interior vector(s) -> full-grid array(s)."""
        x = np.asarray(x)
        batch = x.shape[1:]
        out = np.zeros((self.grid.size,) + batch, dtype=x.dtype)
        out[self.interior_index()] = x
        return out.reshape(self.grid.shape + batch)

    def gather(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)
        batch = u.shape[self.grid.dim:]
        return u.reshape((self.grid.size,) + batch)[self.interior_index()]


def from_fields(V: ScalarField, A: VectorField | None, h: float, mu: float,
                links: str = "midpoint") -> MagneticOperator:
    grid = V.grid
    if A is None or mu == 0:
        phases = tuple(np.ones(tuple(n - (1 if i == k else 0) for i, n in enumerate(grid.shape)), dtype=complex)
                       for k in range(grid.dim))
    else:
        if not A.grid.same_as(grid):
            raise ValueError("V and A live on different grids")
        phases = tuple(np.exp(-1j * (mu / h) * I) for I in edge_integrals(A, links))
    return MagneticOperator(grid, V, A, float(h), float(mu), phases)


def assemble(model: ModelConfig) -> MagneticOperator:
    grid = model.grid()
    V = model.sample_potential(grid)
    A = model.sample_vector_potential(grid)
    return from_fields(V, A, model.h, model.mu, model.links)


def gauge_transform(op: MagneticOperator, chi_id: str, chi_params=None,
                    rule: str = "exact") -> MagneticOperator:
    """Operator for ``A + grad chi``.

    ``rule="exact"`` multiplies each link by ``exp(-i mu (chi(end)-chi(start))/h)``,
    an exact lattice symmetry; ``rule="midpoint"`` re-samples ``A + grad chi``
    with the midpoint rule (gauge covariant up to O(dx^2)).
    """
    g = op.grid
    A = op.A
    if A is None:
        A = VectorField(g, np.zeros((g.dim,) + g.shape),
                        func=lambda *xs: tuple(np.zeros_like(x, dtype=float) for x in xs))
    new_A = add_gradient(A, chi_id, chi_params)
    if rule == "midpoint":
        return from_fields(op.V, new_A, op.h, op.mu, "midpoint")
    if rule != "exact":
        raise ValueError(f"unknown gauge rule {rule!r}")
    chi, _ = gauge_function(chi_id, chi_params)
    values = chi(*g.coords())
    phases = []
    for k, p in enumerate(op.phases):
        lo, hi = _edge_slices(g.dim, k)
        phases.append(p * np.exp(-1j * op.mu / op.h * (values[hi] - values[lo])))
    return replace(op, A=new_A, phases=tuple(phases))


def gauge_state(u: np.ndarray, chi: ScalarField | np.ndarray, h: float, mu: float) -> np.ndarray:
    """``u * exp(i mu chi / h)``: intertwines ``P_A`` and ``P_{A + grad chi}``."""
    chi_vals = chi.values if isinstance(chi, ScalarField) else np.asarray(chi)
    return np.asarray(u) * np.exp(1j * mu * chi_vals / h)
