"""Discrete checks of the weighted energy identities and decay estimates.

All integrals use the node quadrature of the eigensolver (uniform cell
volume on interior nodes). Dirichlet-form terms live on lattice edges, and
boundary fluxes on the edges that leave the integration region, so the
discrete Green formula closes exactly; what remains in a relative defect is
the quadrature error of the weight terms, O((dx |grad Phi| / h)^2).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .grid import ComplexField, Grid, ScalarField, VectorField
from .operator import MagneticOperator, _edge_slices, edge_integrals

LOG_FLOOR = 1e-150


@dataclass
class IdentityReport:
    name: str
    lhs_terms: dict[str, float]
    rhs_terms: dict[str, float]
    boundary_term: float
    relative_defect: float
    extras: dict[str, float] = field(default_factory=dict)

    @property
    def lhs(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lhs"] = self.lhs
        d["rhs"] = self.rhs
        return d


def _report(name, lhs, rhs, boundary_key, extras=None) -> IdentityReport:
    terms = list(lhs.values()) + list(rhs.values())
    scale = max(max(abs(t) for t in terms), 1e-300)
    defect = abs(sum(lhs.values()) - sum(rhs.values())) / scale
    return IdentityReport(name, {k: float(v) for k, v in lhs.items()},
                          {k: float(v) for k, v in rhs.items()},
                          float(rhs.get(boundary_key, 0.0)), float(defect), dict(extras or {}))


def _values(x, grid: Grid, default=0.0) -> np.ndarray:
    if x is None:
        return np.full(grid.shape, default, dtype=float)
    return np.asarray(getattr(x, "values", x))


def _centered_gradient(f: np.ndarray, grid: Grid) -> list[np.ndarray]:
    if grid.dim == 1:
        return [np.gradient(f, grid.spacing[0], edge_order=2)]
    return list(np.gradient(f, *grid.spacing, edge_order=2))


def quantum_current(u) -> VectorField:
    """``J_u = -i (grad u . conj(u) - grad conj(u) . u)`` by centred differences."""
    grid = u.grid
    vals = np.asarray(u.values, dtype=complex)
    comps = []
    for du in _centered_gradient(vals, grid):
        j = -1j * (du * np.conj(vals) - np.conj(du) * vals)
        imag = np.max(np.abs(j.imag)) if j.size else 0.0
        assert imag <= 1e-14 * max(1.0, float(np.max(np.abs(j.real)))), "current is not real"
        comps.append(j.real)
    return VectorField(grid, np.array(comps))


def _edges(grid: Grid, omega: np.ndarray, k: int):
    """Masks (on the forward-edge array of axis k) of internal and crossing edges.

    Internal edges join two nodes of ``omega + Dirichlet`` with at least one in
    ``omega``; crossing edges leave ``omega`` towards a free node. Returned as
    ``internal, cross_fwd, cross_bwd``: ``cross_fwd`` has its inside node at the
    lower end.
    """
    lo, hi = _edge_slices(grid.dim, k)
    dirich = grid.dirichlet
    closed = omega | dirich
    a_in, b_in = omega[lo], omega[hi]
    internal = closed[lo] & closed[hi] & (a_in | b_in)
    cross_fwd = a_in & ~closed[hi]
    cross_bwd = b_in & ~closed[lo]
    return internal, cross_fwd, cross_bwd


def _check_omega(grid: Grid, omega, u: np.ndarray) -> np.ndarray:
    omega = np.ones(grid.shape, dtype=bool) if omega is None else np.asarray(omega, dtype=bool)
    on_boundary = omega & grid.dirichlet
    if np.any(np.abs(u[on_boundary]) > 0):
        raise ValueError("integration region touches the grid boundary where u does not vanish")
    return omega & grid.interior


def bulk_coefficient(V, phi, grid: Grid | None = None) -> np.ndarray:
    """Pointwise ``V - |grad Phi|^2`` with the upwind gradient of the eikonal solver."""
    from .eikonal import gradient_magnitude

    grid = grid or V.grid
    return _values(V, grid) - gradient_magnitude(_values(phi, grid), grid) ** 2


def identity_residual_complex(u, phi_r, phi_i, op: MagneticOperator, omega=None,
                              name: str = "weighted_energy_complex") -> IdentityReport:
    """Weighted energy identity for a complex Lipschitz weight ``Phi_R + i Phi_I``.

    LHS: kinetic ``int |(hD - mu A) e^{Phi/h} u|^2``, bulk
    ``int e^{2Phi_R/h}(V - |grad Phi_R|^2 - |grad Phi_I|^2 + 2 mu <grad Phi_I, A>)|u|^2``,
    and ``- h int e^{2Phi_R/h} <J_u, grad Phi_I>``. RHS:
    ``Re int e^{2Phi_R/h} (P_A u) conj(u)`` plus the boundary flux
    ``h^2 Re int_{dOmega} e^{2Phi_R/h} conj(u) du/dnu``.
    """
    grid = op.grid
    if not u.grid.same_as(grid):
        raise ValueError("u lives on a different grid")
    uv = np.asarray(u.values, dtype=complex)
    om = _check_omega(grid, omega, uv)
    h, mu, dv = op.h, op.mu, grid.cell_volume
    pr = _values(phi_r, grid)
    pi = _values(phi_i, grid)
    has_imag = phi_i is not None and np.any(pi != 0)
    # e^{Phi/h} u, with the real exponent kept finite where u is tiny
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        w = np.where(uv != 0, np.exp(pr / h) * uv, 0) * np.exp(1j * pi / h)
        g = np.exp(2 * pr / h)
    w = np.nan_to_num(w)

    kinetic = 0.0
    grad_term = 0.0
    boundary = 0.0
    for k, t in enumerate(op.hopping):
        lo, hi = _edge_slices(grid.dim, k)
        p = op.phases[k]
        internal, cf, cb = _edges(grid, om, k)
        diff = w[lo] - p * w[hi]
        kinetic += t * np.sum(np.abs(diff[internal]) ** 2) * dv
        # edge quadrature of e^{2Phi_R/h} |d Phi_R|^2 |u|^2 (covariant midpoint of |u|^2)
        s2 = ((pr[hi] - pr[lo]) / h) ** 2
        mixed = np.real(p * np.conj(w[lo]) * w[hi])
        grad_term += t * np.sum((s2 * mixed)[internal]) * dv
        # boundary flux on crossing edges, inside node first
        dsig = dv / grid.spacing[k]
        fl = np.conj(uv[lo]) * (p * uv[hi] - uv[lo]) / grid.spacing[k]
        bl = np.conj(uv[hi]) * (np.conj(p) * uv[lo] - uv[hi]) / grid.spacing[k]
        boundary += h**2 * (np.sum(np.real(g[lo] * fl)[cf]) + np.sum(np.real(g[hi] * bl)[cb])) * dsig

    V = op.V.values
    u2 = np.abs(uv) ** 2
    gu2 = np.where(u2 > 0, np.exp(np.clip(2 * pr / h + np.log(np.where(u2 > 0, u2, 1.0)), -745, 709)), 0)
    bulk_v = np.sum((V * gu2)[om]) * dv
    imag_part = 0.0
    current = 0.0
    if has_imag:
        gpi = _centered_gradient(pi, grid)
        A = op.A.values if op.A is not None else np.zeros((grid.dim,) + grid.shape)
        coef = -sum(gk**2 for gk in gpi) + 2 * mu * sum(gk * ak for gk, ak in zip(gpi, A))
        imag_part = np.sum((coef * gu2)[om]) * dv
        J = quantum_current(ComplexField(grid, uv)).values
        current = h * np.sum((np.exp(2 * pr / h) * sum(jk * gk for jk, gk in zip(J, gpi)))[om]) * dv
    bulk = bulk_v - grad_term + imag_part
    Pu = op.apply(uv)
    rhs_bulk = np.sum(np.real(g * Pu * np.conj(uv))[om]) * dv

    lhs = {"kinetic": kinetic, "bulk": bulk, "current": -current}
    rhs = {"weighted_energy": rhs_bulk, "boundary": boundary}
    extras = {"bulk_potential": float(bulk_v), "bulk_grad_phi_r": float(-grad_term),
              "bulk_phi_i": float(imag_part)}
    return _report(name, lhs, rhs, "boundary", extras)


def identity_residual_real(u, phi, op: MagneticOperator, omega=None) -> IdentityReport:
    """Real-weight special case (``Phi_I = 0``) of the weighted energy identity."""
    rep = identity_residual_complex(u, phi, None, op, omega, name="weighted_energy_real")
    lhs = {"kinetic": rep.lhs_terms["kinetic"], "bulk": rep.lhs_terms["bulk"]}
    return _report("weighted_energy_real", lhs, rep.rhs_terms, "boundary",
                   {k: v for k, v in rep.extras.items() if k != "bulk_phi_i"})


# -- Lavine / O'Carroll type identity -----------------------------------------

def edge_field(f: VectorField) -> list[np.ndarray]:
    """Values of a vector field on forward edges (midpoints)."""
    grid = f.grid
    xs = grid.coords()
    out = []
    for k in range(grid.dim):
        lo, hi = _edge_slices(grid.dim, k)
        if f.func is not None:
            mid = tuple(0.5 * (x[lo] + x[hi]) for x in xs)
            val = np.broadcast_to(np.asarray(f.func(*mid)[k], dtype=float), xs[0][lo].shape)
        else:
            val = 0.5 * (f.values[k][lo] + f.values[k][hi])
        out.append(np.array(val, dtype=float))
    return out


def log_derivative(u0, floor: float = LOG_FLOOR) -> list[np.ndarray]:
    """Edge values of ``grad u0 / u0`` as ``log(u0_j / u0_i) / dx`` (0 where u0 <= floor)."""
    grid = u0.grid
    vals = np.real(np.asarray(u0.values))
    out = []
    for k in range(grid.dim):
        lo, hi = _edge_slices(grid.dim, k)
        ok = (vals[lo] > floor) & (vals[hi] > floor)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(ok, np.log(np.where(ok, vals[hi], 1.0) / np.where(ok, vals[lo], 1.0)), 0.0)
        out.append(f / grid.spacing[k])
    return out


def _edge_divergence(fe: list[np.ndarray], grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Node divergence and node mean of squared edge values."""
    div = np.zeros(grid.shape)
    sq = np.zeros(grid.shape)
    for k, f in enumerate(fe):
        lo, hi = _edge_slices(grid.dim, k)
        dx = grid.spacing[k]
        div[lo] += f / dx
        div[hi] -= f / dx
        sq[lo] += 0.5 * f**2
        sq[hi] += 0.5 * f**2
    return div, sq


def lavine_identity(u_tilde, f, op: MagneticOperator, *, V=None, lambda0: float | None = None,
                    support_band: int = 2, support_tol: float = 1e-12) -> list[IdentityReport]:
    """``int |(hD - mu A + i h f) v|^2 = int |(hD - mu A) v|^2 + h^2 int (div f + |f|^2)|v|^2``.

    ``f`` is a VectorField or a list of edge arrays (see :func:`log_derivative`).
    When ``V`` and ``lambda0`` are given (``f = grad u0 / u0``), a second report
    replaces the last integral by ``int (V - lambda0) |v|^2``.
    """
    grid = op.grid
    v = np.array(u_tilde.values, dtype=complex)
    band = np.zeros(grid.shape, dtype=bool)
    for k in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[k] = slice(0, support_band + 1)
        band[tuple(idx)] = True
        idx[k] = slice(-(support_band + 1), None)
        band[tuple(idx)] = True
    vmax = np.max(np.abs(v))
    if np.any(np.abs(v[band]) > support_tol * vmax):
        raise ValueError(f"u_tilde must vanish within {support_band} nodes of the boundary")
    v[band] = 0
    fe = f if isinstance(f, list) else edge_field(f)
    h, dv = op.h, grid.cell_volume
    lhs = 0.0
    plain = 0.0
    f2 = 0.0
    for k, t in enumerate(op.hopping):
        lo, hi = _edge_slices(grid.dim, k)
        p = op.phases[k]
        dx = grid.spacing[k]
        cov = -1j * h * (p * v[hi] - v[lo]) / dx
        avg = 0.5 * (v[lo] + p * v[hi])
        lhs += np.sum(np.abs(cov + 1j * h * fe[k] * avg) ** 2) * dv
        plain += np.sum(np.abs(cov) ** 2) * dv
        f2 += h**2 * np.sum(fe[k] ** 2 * np.abs(avg) ** 2) * dv
    div, _ = _edge_divergence(fe, grid)
    v2 = np.abs(v) ** 2
    divterm = h**2 * np.sum(div * v2) * dv
    reports = [_report("lavine", {"magnetic_shifted": lhs},
                       {"magnetic": plain, "divergence": divterm, "f_squared": f2}, "none")]
    if V is not None and lambda0 is not None:
        Vv = _values(V, grid)
        pot = np.sum((Vv - lambda0) * v2) * dv
        reports.append(_report("lavine_ground_state", {"magnetic_shifted": lhs},
                               {"magnetic": plain, "potential_shift": pot}, "none"))
    return reports


def smooth_cutoff(grid: Grid, width: float, band: int = 2) -> np.ndarray:
    """C-infinity cutoff: 1 away from the box faces, 0 within ``band`` nodes of them.

    The transition (a standard ``exp(-1/t)`` blend) spans ``width`` inward from
    the edge of the zero band.
    """
    out = np.ones(grid.shape)
    for k, x in enumerate(grid.coords()):
        d = np.minimum(x - grid.lower[k], grid.upper[k] - x) - (band + 0.5) * grid.spacing[k]
        t = np.clip(d / width, 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
            b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
        out *= a / (a + b)
    return out


def log_derivative_defect(u0, V, lambda0: float, h: float, region) -> float:
    """Sup over ``region`` of ``|h^2 (div f + |f|^2) - (V - lambda0)|`` for ``f = grad u0/u0``."""
    grid = u0.grid
    div, sq = _edge_divergence(log_derivative(u0), grid)
    diff = h**2 * (div + sq) - (_values(V, grid) - lambda0)
    return float(np.max(np.abs(diff[np.asarray(region, dtype=bool)])))


# -- relative identity u_A = u_0 v ----------------------------------------------

def relative_identity(u_a, u0, phi_r, phi_i, op: MagneticOperator, lambda_a: float, lambda0: float,
                      omega=None, floor: float = 1e-12) -> IdentityReport:
    """Weighted identity for ``v = u_A / u_0``.

    LHS: ``int e^{2Phi_R/h} u0^2 |(h grad + grad Phi_R) v|^2``,
    ``int e^{2Phi_R/h} u0^2 (-|grad Phi_R|^2 + mu^2|A|^2 - lambda_A + lambda_0)|v|^2`` and
    ``h int e^{2Phi_R/h} u0^2 <J_v, 2 grad Phi_I - mu A>``. RHS: the boundary
    flux of ``u_A`` minus the ``<f, nu>`` term with ``f = grad u0 / u0``.
    The balance is exact (up to quadrature) when ``Phi_I`` makes the
    ``<J_v, grad Phi_I>`` integral vanish, in particular for ``Phi_I = 0``.
    """
    grid = op.grid
    ua = np.asarray(u_a.values, dtype=complex)
    z = np.real(np.asarray(u0.values))
    om = _check_omega(grid, omega, ua)
    thresh = floor * np.max(np.abs(z))
    if np.any(z[om] < -thresh):
        raise ValueError("u0 changes sign inside the integration region")
    good = z > thresh
    # nodes whose neighbours all carry a usable ratio
    ok = good.copy()
    for k in range(grid.dim):
        lo, hi = _edge_slices(grid.dim, k)
        ok[lo] &= good[hi]
        ok[hi] &= good[lo]
    for k in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[k] = 0
        ok[tuple(idx)] = False
        idx[k] = -1
        ok[tuple(idx)] = False
    om2 = om & ok
    excluded = int(om.sum() - om2.sum())
    h, mu, dv = op.h, op.mu, grid.cell_volume
    pr = _values(phi_r, grid)
    pi = _values(phi_i, grid)
    zs = np.where(good, z, 1.0)
    v = np.where(good, ua / zs, 0)
    vt = np.exp(pr / h) * v
    g = np.exp(2 * pr / h)

    pi_present = phi_i is not None
    dirichlet = grad_term = magnetic = current = current_variant = 0.0
    boundary_flux = boundary_f = 0.0
    for k, t in enumerate(op.hopping):
        lo, hi = _edge_slices(grid.dim, k)
        p = op.phases[k]
        dx = grid.spacing[k]
        inside = om2[lo] & om2[hi]
        cf = om2[lo] & ~om2[hi]
        cb = om2[hi] & ~om2[lo]
        zz = z[lo] * z[hi]
        # weighted products at edge midpoints: e^{(Phi_i + Phi_j)/h} conj(v_i) v_j
        prod = zz * np.conj(vt[lo]) * vt[hi]
        dirichlet += t * np.sum((zz * np.abs(vt[hi] - vt[lo]) ** 2)[inside]) * dv
        s2 = ((pr[hi] - pr[lo]) / h) ** 2
        grad_term += t * np.sum((s2 * np.real(prod))[inside]) * dv
        if mu > 0:
            a_edge = -np.angle(p) * h / (mu * dx)
        elif op.A is not None:
            a_edge = edge_integrals(op.A)[k] / dx
        else:
            a_edge = np.zeros_like(s2)
        magnetic += np.sum(((mu * a_edge) ** 2 * np.real(prod))[inside]) * dv
        j_edge = 2 * np.imag(prod) / dx
        dpi = (pi[hi] - pi[lo]) / dx if pi_present else 0.0
        current += h * np.sum((j_edge * (2 * dpi - mu * a_edge))[inside]) * dv
        current_variant += h * np.sum((j_edge * (2 * dpi - a_edge))[inside]) * dv
        dsig = dv / dx
        fl = np.real(np.conj(ua[lo]) * (p * ua[hi] - ua[lo])) / dx
        bl = np.real(np.conj(ua[hi]) * (np.conj(p) * ua[lo] - ua[hi])) / dx
        boundary_flux += h**2 * (np.sum((g[lo] * fl)[cf]) + np.sum((g[hi] * bl)[cb])) * dsig
        ff = (z[hi] - zs[lo]) / (zs[lo] * dx)
        fb = (z[lo] - zs[hi]) / (zs[hi] * dx)
        boundary_f += h**2 * (np.sum((g[lo] * np.abs(ua[lo]) ** 2 * ff)[cf])
                              + np.sum((g[hi] * np.abs(ua[hi]) ** 2 * fb)[cb])) * dsig

    gz2v2 = g * z**2 * np.abs(v) ** 2
    shift = (lambda0 - lambda_a) * np.sum(gz2v2[om2]) * dv
    lhs = {"dirichlet": dirichlet, "bulk": -grad_term + magnetic + shift, "current": current}
    rhs = {"boundary_flux": boundary_flux, "boundary_f": -boundary_f}
    rep = _report("relative_energy", lhs, rhs, "boundary_flux",
                  {"excluded_nodes": excluded, "current_unscaled_A": float(current_variant),
                   "bulk_grad_phi_r": float(-grad_term), "bulk_magnetic": float(magnetic),
                   "bulk_shift": float(shift)})
    rep.boundary_term = float(boundary_flux - boundary_f)
    return rep


def relative_bulk_coefficient(A: VectorField, mu: float, gap: float, phi, grid: Grid | None = None):
    """Pointwise ``mu^2 |A|^2 - gap - |grad Phi|^2`` (upwind gradient)."""
    from .eikonal import gradient_magnitude

    grid = grid or A.grid
    return mu**2 * A.norm_squared() - gap - gradient_magnitude(_values(phi, grid), grid) ** 2


# -- phase condition ------------------------------------------------------------

def phase_condition_residual(j_v: VectorField, phi_i, A: VectorField | None, mu: float) -> ScalarField:
    """Pointwise ``<J_v, 2 grad Phi_I - mu A>``."""
    grid = j_v.grid
    gpi = _centered_gradient(_values(phi_i, grid), grid)
    Av = A.values if A is not None else np.zeros((grid.dim,) + grid.shape)
    r = sum(jk * (2 * gk - mu * ak) for jk, gk, ak in zip(j_v.values, gpi, Av))
    return ScalarField(grid, r)


def phase_along_curve(A: VectorField, mu: float, curve: np.ndarray, tube_radius: float):
    """Phase ``Phi_I`` with ``2 dPhi_I - mu A`` vanishing along ``curve``.

    ``Phi_I`` on the curve is ``(mu/2) int A . dl`` (trapezoidal, from the first
    vertex); inside the tube each node takes the value at its nearest vertex,
    outside it is 0. This minimises the tangential residual on the curve.
    Returns ``(Phi_I field, tube mask, sum of squared tangential residuals)``.
    """
    grid = A.grid
    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    if A.func is not None:
        a_curve = np.array([[float(c) for c in A.func(*pt)] for pt in curve])
    else:
        a_curve = np.array([A.values[(slice(None),) + grid.nearest_node(pt)] for pt in curve])
    seg = np.diff(curve, axis=0)
    a_mid = 0.5 * (a_curve[1:] + a_curve[:-1])
    phase = np.concatenate([[0.0], np.cumsum(0.5 * mu * np.sum(a_mid * seg, axis=1))])
    pts = np.stack([c.ravel() for c in grid.coords()], axis=1)
    d2 = ((pts[:, None, :] - curve[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(len(pts)), nearest])
    tube = dist <= tube_radius
    phi = np.where(tube, phase[nearest], 0.0).reshape(grid.shape)
    lens = np.linalg.norm(seg, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tang = np.where(lens[:, None] > 0, seg / lens[:, None], 0)
    dphi = np.diff(phase)
    resid = np.where(lens > 0, 2 * dphi / np.where(lens > 0, lens, 1) - mu * np.sum(a_mid * tang, axis=1), 0)
    return ScalarField(grid, phi), tube.reshape(grid.shape), float(np.sum(resid**2 * lens))


# -- weighted norms and decay -----------------------------------------------------

@dataclass
class DecayReport:
    rho: np.ndarray = field(repr=False)
    region: np.ndarray = field(repr=False)
    sup_defect: float
    rate_ratio: float
    intercept: float
    min_margin: float
    nodes: int

    def to_dict(self) -> dict:
        return {"sup_defect": self.sup_defect, "rate_ratio": self.rate_ratio,
                "intercept": self.intercept, "min_margin": self.min_margin, "nodes": self.nodes}


def weighted_norm(u, phi, h: float, region=None) -> float:
    """``int_region e^{2 Phi/h} |u|^2`` evaluated in log space."""
    grid = u.grid
    a = np.abs(np.asarray(u.values))
    pv = _values(phi, grid)
    region = np.ones(grid.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    sel = region & (a > 0)
    if not region.any():
        raise ValueError("empty region")
    logs = 2 * pv[sel] / h + 2 * np.log(a[sel])
    if logs.size == 0:
        return 0.0
    m = logs.max()
    return float(np.exp(m) * np.sum(np.exp(logs - m)) * grid.cell_volume)


def decay_report(u, phi, h: float, floor: float = LOG_FLOOR, well_mask=None, region=None) -> DecayReport:
    """Compare ``rho = -h log|u|`` with a weight ``Phi``.

    The region excludes nodes with ``|u| <= floor`` and the well neighbourhood.
    ``rate_ratio`` is the least-squares slope of ``rho`` against ``Phi`` (with
    intercept), ``sup_defect = sup (Phi - rho)`` and ``min_margin = min (rho - Phi)``.
    """
    grid = u.grid
    a = np.abs(np.asarray(u.values))
    pv = _values(phi, grid)
    reg = np.ones(grid.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    reg = reg & (a > floor)
    if well_mask is not None:
        reg &= ~np.asarray(well_mask, dtype=bool)
    if not reg.any():
        raise ValueError("empty decay region")
    with np.errstate(divide="ignore"):
        rho = np.where(a > floor, -h * np.log(np.where(a > 0, a, 1.0)), np.nan)
    x = pv[reg]
    y = rho[reg]
    if np.ptp(x) > 0:
        slope, icpt = np.polyfit(x, y, 1)
    else:
        slope, icpt = float("nan"), float(np.mean(y - x))
    diff = x - y
    return DecayReport(rho, reg, float(diff.max()), float(slope), float(icpt), float(-diff.max()), int(reg.sum()))


def parity_defect(u: np.ndarray, grid: Grid, parity: int, axis: int = -1) -> float:
    """L2 norm of ``u(sigma x) - parity * u(x)`` relative to ``||u||``."""
    u = np.asarray(u)
    refl = np.flip(u, axis=axis % grid.dim)
    return float(np.linalg.norm(refl - parity * u) / np.linalg.norm(u))


# -- gauge and flux checks -------------------------------------------------------

@dataclass
class SpectrumShift:
    name: str
    before: list[float]
    after: list[float]
    max_shift: float
    tolerance: float
    invariant: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _lowest(op, k: int, tol: float, seed: int) -> list[float]:
    from .eigen import lowest_eigenpairs

    pairs, _ = lowest_eigenpairs(op, k, tol, seed=seed)
    return [p.lam for p in pairs]


def _shift(name, a, b, tol) -> SpectrumShift:
    m = float(max(abs(x - y) for x, y in zip(a, b)))
    return SpectrumShift(name, list(a), list(b), m, 10 * tol, m <= 10 * tol)


def gauge_shift_check(model, chi_id: str, chi_params=None, *, k: int = 1, tol: float = 1e-9,
                      rule: str = "exact", seed: int = 0) -> SpectrumShift:
    """Lowest ``k`` eigenvalues before and after ``A -> A + grad chi``."""
    from .operator import assemble, gauge_transform

    op = assemble(model)
    before = _lowest(op, k, tol, seed)
    after = _lowest(gauge_transform(op, chi_id, chi_params, rule), k, tol, seed)
    return _shift(f"gauge:{chi_id}", before, after, tol)


def flux_shift_check(model, shift: float, *, k: int = 3, tol: float = 1e-9, seed: int = 0) -> SpectrumShift:
    """Lowest ``k`` eigenvalues when the enclosed Aharonov-Bohm flux grows by ``shift``.

    The model must use the ``aharonov-bohm`` vector potential on an annulus.
    A shift by ``2 pi h / mu`` is a lattice gauge transformation when edge
    integrals are exact.
    """
    from .operator import assemble

    if model.vector_potential != "aharonov-bohm":
        raise ValueError("flux shifts need the aharonov-bohm vector potential")
    flux = float(model.vector_params.get("flux", 1.0))
    shifted = model.with_(vector_params={**model.vector_params, "flux": flux + shift})
    before = _lowest(assemble(model), k, tol, seed)
    after = _lowest(assemble(shifted), k, tol, seed)
    return _shift(f"flux:+{shift:.6g}", before, after, tol)


def kato_sweep(model, mu_list: Sequence[float], *, tol: float = 1e-9, seed: int = 0) -> dict:
    """Ground energies along ``mu`` and whether ``lambda_0 <= lambda_A`` holds for each."""
    from .operator import assemble

    lam0 = _lowest(assemble(model.with_(mu=0.0)), 1, tol, seed)[0]
    rows = []
    for mu in mu_list:
        lam = _lowest(assemble(model.with_(mu=float(mu))), 1, tol, seed)[0]
        rows.append({"mu": float(mu), "lambda": lam, "holds": bool(lam0 <= lam + 10 * tol)})
    return {"lambda0": lam0, "rows": rows, "holds": all(r["holds"] for r in rows)}


# -- pipelines -------------------------------------------------------------------

@dataclass
class GroundStates:
    """Magnetic and non-magnetic ground states with their Agmon weights."""

    op: MagneticOperator
    op0: MagneticOperator
    pair: object
    pair0: object
    phi0: object
    phi1: object
    phi_a: object

    @property
    def gap(self) -> float:
        return self.pair.lam - self.pair0.lam


def ground_states(model, *, tol: float = 1e-9, seed: int = 0, refine: float | None = 0.9,
                  gap: float | None = None) -> GroundStates:
    """Solve for ``lambda_A``, ``lambda_0`` and build ``Phi_0``, ``Phi_1``, ``Phi_A``.

    ``gap`` defaults to the computed ``lambda_A - lambda_0``; pass 0 to drop
    the energy shift. With ``refine`` set, eigenvector tails are recomputed
    against ``refine * Phi`` so the exponentially small values are accurate.
    """
    from .eigen import lowest_eigenpairs, refine_tails
    from .eikonal import agmon_phi0, agmon_phi1, combine_max
    from .operator import assemble

    op = assemble(model)
    op0 = assemble(model.with_(mu=0.0))
    (pa,), _ = lowest_eigenpairs(op, 1, tol, seed=seed)
    (p0,), _ = lowest_eigenpairs(op0, 1, tol, seed=seed)
    phi0 = agmon_phi0(op.V, p0.lam)
    if op.A is not None and model.mu > 0:
        g = max(pa.lam - p0.lam, 0.0) if gap is None else gap
        phi1 = agmon_phi1(op.A, model.mu, g)
        phi_a = combine_max(phi0, phi1)
    else:
        phi1 = None
        phi_a = phi0
    if refine:
        pa = refine_tails(op, pa, refine * phi_a.values)
        p0 = refine_tails(op0, p0, refine * phi0.values)
    return GroundStates(op, op0, pa, p0, phi0, phi1, phi_a)


IDENTITIES = ("weighted_energy_complex", "weighted_energy_real", "lavine", "relative_energy")


def identity_suite(gs: GroundStates, *, delta: float = 0.1, omega_radius: float = 0.5,
                   phase_alpha: float = 0.0, cutoff_width: float = 0.5,
                   identities: Sequence[str] = IDENTITIES) -> list[IdentityReport]:
    """Evaluate the selected identities on ``Omega = {|x| >= omega_radius}``.

    The real weight is ``(1 - delta) Phi_A``; the complex-weight identity uses
    the imaginary part ``phase_alpha * x1 * x2`` (``x^2 / 2`` in 1D).
    """
    unknown = set(identities) - set(IDENTITIES)
    if unknown:
        raise ValueError(f"unknown identities {sorted(unknown)}; expected a subset of {IDENTITIES}")
    op = gs.op
    grid = op.grid
    xs = grid.coords()
    omega = np.sqrt(sum(x**2 for x in xs)) >= omega_radius
    phi_r = (1 - delta) * gs.phi_a.values
    phi_i = phase_alpha * (np.prod(xs, axis=0) if grid.dim > 1 else 0.5 * xs[0] ** 2)
    u = gs.pair.u
    out = []
    if "weighted_energy_complex" in identities:
        out.append(identity_residual_complex(u, phi_r, phi_i if phase_alpha else None, op, omega))
    if "weighted_energy_real" in identities:
        out.append(identity_residual_real(u, phi_r, op, omega))
    if "lavine" in identities:
        ut = ComplexField(grid, u.values * smooth_cutoff(grid, cutoff_width))
        out.extend(lavine_identity(ut, log_derivative(gs.pair0.u), op, V=op.V, lambda0=gs.pair0.lam))
    if "relative_energy" in identities:
        u0 = ComplexField(grid, np.real(gs.pair0.u.values))
        out.append(relative_identity(u, u0, phi_r, None, op, gs.pair.lam, gs.pair0.lam, omega))
    return out
