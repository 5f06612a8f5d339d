"""Symmetric double wells: splittings, one-well states and rate sweeps.

The reflection is ``sigma(x', x_d) = (x', -x_d)`` across the grid plane
``x_d = 0`` (the last axis). For ``mu > 0`` the symmetry used is reflection
composed with complex conjugation.

In 1D the splitting is far below double-precision resolution of the
eigenvalues themselves once ``h`` is small, so it is computed from the
parity sectors: the odd sector is the one-well problem with a wall at the
centre, and the even ground state follows from a scalar Schur complement
``d_c - lam - 2 t^2 e1^T (O - lam)^{-1} e1 = 0`` with the dominant pole
removed analytically. A multiprecision Sturm-bisection routine on the same
tridiagonal matrix serves as an independent check.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .eigen import lowest_eigenpairs
from .eikonal import point_source, solve_eikonal, trace_geodesic, well_to_well
from .grid import ComplexField, ScalarField, inner, norm
from .model import ModelConfig
from .operator import MagneticOperator, assemble

log = logging.getLogger(__name__)

RESOLVED = "RESOLVED"
UNRESOLVED = "UNRESOLVED"
SWEEP_COLUMNS = ("h", "mu", "lambda_minus", "lambda_plus", "delta", "rate", "reference_distance", "status")


# -- models ---------------------------------------------------------------------

@dataclass(frozen=True)
class DoubleWellModel:
    config: ModelConfig
    well_upper: tuple[float, ...]
    well_lower: tuple[float, ...]
    potential_defect: float
    vector_defect: float
    reflected_residual: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.config.points)

    def at(self, h: float | None = None, mu: float | None = None) -> "DoubleWellModel":
        changes = {}
        if h is not None:
            changes["h"] = float(h)
        if mu is not None:
            changes["mu"] = float(mu)
        cfg = self.config.with_(**changes)
        if mu is not None and mu != self.config.mu:
            return make_double_well(cfg)
        return replace(self, config=cfg)

    def operator(self) -> MagneticOperator:
        return assemble(self.config)


def reflected_phases(op: MagneticOperator) -> tuple[np.ndarray, ...]:
    """Link phases of the operator conjugated by reflection and complex conjugation."""
    d = op.grid.dim - 1
    out = []
    for k, p in enumerate(op.phases):
        flipped = np.flip(p, axis=d)
        # reversing the orientation of an x_d edge cancels the conjugation
        out.append(flipped if k == d else np.conj(flipped))
    return tuple(out)


def _find_wells(cfg: ModelConfig, V: ScalarField):
    dim = len(cfg.points)
    if cfg.potential in ("quartic-double-well", "gaussian-wells"):
        a = float(cfg.potential_params.get("a", 1.0))
        up = (0.0,) * (dim - 1) + (a,)
    else:
        g = V.grid
        xd = g.coords()[-1]
        vals = np.where(xd > 0, V.values, np.inf)
        up = tuple(float(c) for c in g.node_position(np.unravel_index(np.argmin(vals), g.shape)))
    low = up[:-1] + (-up[-1],)
    return up, low


def make_double_well(config: ModelConfig, *, tol: float = 1e-8, check_k: int = 2) -> DoubleWellModel:
    """Validate reflection symmetry and record the wells.

    The potential must be even in ``x_d`` to 1e-8 on a grid symmetric about
    ``x_d = 0``. For ``mu > 0`` the Peierls phases must be invariant under
    reflection composed with conjugation, and the reflected images of the
    ``check_k`` lowest eigenvectors must again be eigenvectors (residual
    within ``10 tol``).
    """
    grid = config.grid()
    if not grid.is_symmetric(-1):
        raise ValueError("double-well grid must be symmetric about x_d = 0 with a node on the plane")
    V = config.sample_potential(grid)
    pdef = float(np.max(np.abs(np.flip(V.values, axis=-1) - V.values)))
    if pdef > 1e-8:
        raise ValueError(f"potential is not even in x_d: defect {pdef:.3e}")
    up, low = _find_wells(config, V)
    vdef = 0.0
    rres = 0.0
    if config.mu > 0 and grid.dim > 1:
        op = assemble(config)
        refl = reflected_phases(op)
        vdef = float(max(np.max(np.abs(a - b)) for a, b in zip(refl, op.phases)))
        if vdef > 1e-10:
            raise ValueError(f"vector potential is not compatible with the conjugated reflection: "
                             f"link defect {vdef:.3e}")
        pairs, _ = lowest_eigenpairs(op, check_k, tol)
        for p in pairs:
            ru = reflect_state(p.u, conjugate=True)
            r = float(np.linalg.norm(op.apply(ru.values) - p.lam * ru.values) / np.linalg.norm(ru.values))
            rres = max(rres, r)
        if rres > 10 * tol:
            raise ValueError(f"reflected eigenvectors fail the eigen-equation: residual {rres:.3e}")
    return DoubleWellModel(config, up, low, pdef, vdef, rres)


def reflect_state(u: ComplexField, conjugate: bool = False) -> ComplexField:
    """``u(sigma x)``, complex conjugated when ``conjugate``."""
    if not u.grid.is_symmetric(-1):
        raise ValueError("reflection needs a grid symmetric about x_d = 0")
    v = np.flip(np.asarray(u.values), axis=-1)
    if conjugate:
        v = np.conj(v)
    return ComplexField(u.grid, v)


# -- reports --------------------------------------------------------------------

@dataclass
class SplittingReport:
    h: float
    mu: float
    lambda_minus: float
    lambda_plus: float
    delta: float
    rate: float
    reference_distance: float | None = None
    status: str = RESOLVED
    floor: float = 0.0
    one_well_energy: float | None = None
    gap_estimate: float | None = None
    parity: dict[str, float] | None = None
    flags: list[str] = field(default_factory=list)
    method: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list:
        d = self.to_dict()
        return [d[c] for c in SWEEP_COLUMNS]


def _report(h, mu, lm, lp, delta, floor, method, **kw) -> SplittingReport:
    status = RESOLVED
    if not delta > 100 * floor:
        status = UNRESOLVED
        delta = max(floor, delta if delta > 0 else 0.0) or floor
    rate = -h * math.log(delta)
    return SplittingReport(h=h, mu=mu, lambda_minus=float(lm), lambda_plus=float(lp), delta=float(delta),
                           rate=float(rate), status=status, floor=float(floor), method=method, **kw)


# -- 1D sector splitting ----------------------------------------------------------

def _tridiagonal(op: MagneticOperator):
    """Real symmetric tridiagonal form on interior nodes (1D phases are gauge-trivial)."""
    if op.grid.dim != 1 or op.grid.excluded is not None:
        raise ValueError("tridiagonal form needs a 1D grid without exclusions")
    t = op.hopping[0]
    d = op.diagonal()[1:-1].astype(float)
    e = np.full(d.size - 1, -t)
    return d, e


def _odd_sector(d, e):
    """Interior tridiagonal split at the centre node: (centre index, odd-sector diag/off)."""
    n = d.size
    if n % 2 == 0:
        raise ValueError("the symmetry plane must be a grid node")
    c = n // 2
    if np.max(np.abs(d[::-1] - d)) > 1e-12 * np.max(np.abs(d)):
        raise ValueError("tridiagonal matrix is not reflection symmetric")
    return c, d[c + 1:], e[c + 1:]


def _barrier_component(do, eo, lam, vec) -> float:
    """First component of the odd ground vector with full relative accuracy.

    The recurrence ``phi_{i+1} = ((d_i - lam) phi_i + e phi_{i-1}) / (-e)`` is
    stable from the centre through the barrier (the wanted solution grows),
    and is matched to the LAPACK vector at its maximum.
    """
    m = int(np.argmax(np.abs(vec)))
    phi_prev, phi = 0.0, 1.0
    for i in range(m):
        off = eo[i - 1] if i > 0 else 0.0
        nxt = ((do[i] - lam) * phi + off * phi_prev) / (-eo[i])
        phi_prev, phi = phi, nxt
    return float(abs(vec[m] / phi))


def sector_splitting(op: MagneticOperator, iterations: int = 4):
    """Even/odd ground energies of a symmetric 1D operator and the two eigenvectors.

    Returns ``(lambda_minus, lambda_plus, delta, u_minus, u_plus)``; delta is
    obtained directly (not as a difference) so it keeps relative accuracy far
    below ``eps * lambda``.
    """
    d, e = _tridiagonal(op)
    c, do, eo = _odd_sector(d, e)
    t = -e[0]
    lam_all, vecs = sla.eigh_tridiagonal(do, eo)
    lam1 = float(lam_all[0])
    phi1 = vecs[:, 0] * np.sign(vecs[np.argmax(np.abs(vecs[:, 0])), 0])
    f1 = _barrier_component(do, eo, lam1, phi1)
    w = vecs[0, 1:] ** 2
    delta = 0.0
    for _ in range(iterations):
        lam = lam1 - delta
        R = float(np.sum(w / (lam_all[1:] - lam)))
        delta = 2 * t**2 * f1**2 / (d[c] - lam - 2 * t**2 * R)
    lam_minus = lam1 - delta
    # eigenvectors on the full grid: odd = mirrored phi1, even from the sector resolvent
    n = d.size
    odd = np.zeros(n)
    odd[c + 1:] = phi1
    odd[:c] = -phi1[::-1]
    basis = vecs.copy()
    basis[:, 0] = phi1
    coef = np.empty_like(lam_all)
    coef[1:] = basis[0, 1:] / (lam_all[1:] - lam_minus)
    coef[0] = f1 / delta
    y = t * (basis @ coef)
    even = np.zeros(n)
    even[c] = 1.0
    even[c + 1:] = y
    even[:c] = y[::-1]
    g = op.grid
    um = np.zeros(g.size)
    up = np.zeros(g.size)
    um[1:-1] = even
    up[1:-1] = odd
    for u in (um, up):
        u /= np.sqrt(np.sum(u**2) * g.cell_volume)
        u *= np.sign(u[np.argmax(np.abs(u))])
    return lam_minus, lam1, float(delta), ComplexField(g, um), ComplexField(g, up)


def sturm_oracle(op: MagneticOperator, indices: Sequence[int] = (0, 1), *, bits: int = 256,
                 guess: Sequence[float] | None = None, rel: float = 1e-8):
    """Eigenvalues of the 1D tridiagonal matrix by Sturm-count bisection in ``bits``-bit arithmetic.

    Returns gmpy2 ``mpfr`` values; brackets are shrunk until their width is
    below ``rel`` times the smallest gap between the requested eigenvalues.
    """
    import gmpy2
    from gmpy2 import mpfr

    d, e = _tridiagonal(op)
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        dm = [mpfr(float(x)) for x in d]
        e2 = [mpfr(float(x)) ** 2 for x in e]
        tiny = mpfr(2) ** (-bits)

        def count(x):
            n = 0
            q = dm[0] - x
            if q < 0:
                n += 1
            for i in range(1, len(dm)):
                if q == 0:
                    q = tiny
                q = dm[i] - x - e2[i - 1] / q
                if q < 0:
                    n += 1
            return n

        idx = list(indices)
        if guess is None:
            guess = sla.eigh_tridiagonal(d, e, select="i", select_range=(min(idx), max(idx)), eigvals_only=True)
            guess = list(guess[[i - min(idx) for i in idx]])
        out = []
        width0 = mpfr(1e-6) * max(1.0, abs(float(max(guess))))
        for j, g0 in zip(idx, guess):
            lo, hi = mpfr(float(g0)) - width0, mpfr(float(g0)) + width0
            while count(lo) > j:
                lo -= 2 * (hi - lo)
            while count(hi) <= j:
                hi += 2 * (hi - lo)
            out.append([lo, hi])
        target = None
        for _ in range(4 * bits):
            if target is None and all(b[1] - b[0] < width0 * mpfr(2) ** -40 for b in out):
                # first pass: fix the resolution goal from the separation
                vals = sorted((b[0] + b[1]) / 2 for b in out)
                gaps = [vals[i + 1] - vals[i] for i in range(len(vals) - 1)] or [abs(vals[0])]
                target = min(gaps) * mpfr(rel)
            if target is not None and all(b[1] - b[0] < target for b in out):
                break
            for j, b in zip(idx, out):
                mid = (b[0] + b[1]) / 2
                if count(mid) > j:
                    b[1] = mid
                else:
                    b[0] = mid
        return [(b[0] + b[1]) / 2 for b in out]


# -- plane Schur complement -------------------------------------------------------

def _tail_weight(op: MagneticOperator, lam: float, factor: float) -> np.ndarray:
    from .eikonal import agmon_phi0

    return factor * agmon_phi0(op.V, lam).values


def plane_splitting(op: MagneticOperator, *, tol: float = 1e-10, tail_factors=(0.9, 0.8), seed: int = 0):
    """Two lowest eigenvalues of a reflection-symmetric operator via the symmetry plane.

    With the interior unknowns split into the ``x_d > 0`` half (block L), the
    plane and the ``x_d < 0`` half (block R), eliminating both halves leaves a
    Schur complement on the plane whose only nearby singularities are the
    one-well poles at ``lambda_1(L) = lambda_1(R)``. Removing them leaves a
    regular part ``S``; the pair is ``lambda_1 - eig([a b]^* S^{-1} [a b])``
    with ``a, b`` the plane couplings of the one-well ground states. The
    splitting comes out directly (square root of a 2x2 discriminant), so its
    relative accuracy is that of the one-well tails, which are refined by
    conjugated inverse iteration. Two tail weights give an error estimate.

    Returns ``(lambda_minus, lambda_plus, delta, rel_err, one_well_gap, parity)``;
    ``parity`` measures how far the 2x2 eigenvectors are from ``(1, 1)`` and
    ``(1, -1)``, which is meaningful when the reflection is a plain one.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    from .eigen import refine_tails

    g = op.grid
    if g.excluded is not None:
        raise ValueError("plane reduction needs a grid without exclusions")
    if not g.is_symmetric(-1):
        raise ValueError("plane reduction needs a grid symmetric about x_d = 0")
    H = op.to_sparse().tocsr()
    inter = op.interior_index()
    jd = np.unravel_index(inter, g.shape)[-1]
    c = g.shape[-1] // 2
    sets = {"L": np.flatnonzero(jd > c), "P": np.flatnonzero(jd == c), "R": np.flatnonzero(jd < c)}

    # one-well ground state on the upper half (plane clamped)
    keep = np.zeros(g.shape, dtype=bool)
    keep[..., c + 1:] = True
    sub = g.with_excluded(~keep)
    one = MagneticOperator(sub, ScalarField(sub, op.V.values), op.A, op.h, op.mu, op.phases)
    if g.dim == 1:
        pairs, _ = _one_well_1d(one, 2)
    else:
        pairs, _ = lowest_eigenpairs(one, 2, max(tol, 1e-10), seed=seed)
    lam1, lam2 = pairs[0].lam, pairs[1].lam
    gap = lam2 - lam1
    eta = 1e-7 * gap
    mirror = op.mu > 0 and not op.is_real

    HPP = H[sets["P"]][:, sets["P"]].toarray()
    blocks = {}
    for side in ("L", "R"):
        Hss = H[sets[side]][:, sets[side]].tocsc()
        B = H[sets["P"]][:, sets[side]].toarray()
        lu = spla.splu((Hss - (lam1 - eta) * sp.identity(Hss.shape[0], format="csc")).tocsc())
        blocks[side] = (Hss, B, lu)

    estimates = []
    for factor in tail_factors:
        w = _tail_weight(one, lam1, factor)
        ref = refine_tails(one, pairs[0], w)
        full = np.asarray(ref.u.values, dtype=complex)
        if op.is_real:
            full = full.real
        phi = {"L": full.ravel()[inter[sets["L"]]]}
        mirrored = np.flip(full, axis=-1)
        if mirror:
            mirrored = np.conj(mirrored)
        phi["R"] = mirrored.ravel()[inter[sets["R"]]]
        lam0 = lam1 - eta
        S0 = HPP - lam0 * np.eye(HPP.shape[0])
        D = np.eye(HPP.shape[0], dtype=S0.dtype)
        coup = []
        for side in ("L", "R"):
            _, B, lu = blocks[side]
            f = phi[side] / np.linalg.norm(phi[side])
            rhs = B.conj().T
            rhs = rhs - np.outer(f, f.conj() @ rhs)
            X = lu.solve(rhs)
            X = X - np.outer(f, f.conj() @ X)
            S0 = S0 - B @ X
            # d/dlam of B R(lam) B^* is B R^2 B^* = X^* X
            D = D + X.conj().T @ X
            coup.append(B @ f)
        Ab = np.stack(coup, axis=1)
        lam = lam1
        for _ in range(6):
            S = S0 - (lam - lam0) * D
            Mx = Ab.conj().T @ np.linalg.solve(S, Ab)
            Mx = 0.5 * (Mx + Mx.conj().T)
            lam = lam1 - 0.5 * float(np.real(Mx[0, 0] + Mx[1, 1]))
        m11, m22, m12 = Mx[0, 0].real, Mx[1, 1].real, Mx[0, 1]
        disc = math.sqrt((m11 - m22) ** 2 + 4 * abs(m12) ** 2)
        # each state sees M at its own energy: to first order this rescales
        # the discriminant by 1 / (1 + tr(dM/dlam) / 2)
        Y = np.linalg.solve(S, Ab)
        mprime = 0.5 * float(np.real(np.trace(Y.conj().T @ D @ Y)))
        delta = disc / (1 + mprime)
        mean = lam
        _, cvec = np.linalg.eigh(Mx)
        # largest eigenvalue of M is the lower state
        cm, cp = cvec[:, 1], cvec[:, 0]
        parity = {"minus_even_defect": float(abs(cm[0] - cm[1]) / np.linalg.norm(cm)),
                  "plus_odd_defect": float(abs(cp[0] + cp[1]) / np.linalg.norm(cp))}
        estimates.append((mean - 0.5 * delta, mean + 0.5 * delta, delta, parity))
    lm, lp, delta, parity = estimates[0]
    if delta > 0:
        # tail-refinement spread plus the neglected second-order energy dependence
        rel = max(max(abs(e[2] - delta) for e in estimates) / delta, (delta / gap) ** 2)
    else:
        rel = float("inf")
    return lm, lp, delta, rel, gap, parity


# -- direct splitting -----------------------------------------------------------

def splitting_floor(op: MagneticOperator, residuals: Sequence[float], cluster_gap: float) -> float:
    """Accuracy bound for a difference of Ritz values of a two-dimensional cluster.

    Quadratic residual bound ``||R||^2 / gap`` to the rest of the spectrum,
    plus a rounding term ``10 eps ||P||``.
    """
    r = float(np.sqrt(np.sum(np.square(residuals))))
    gap = max(cluster_gap, np.finfo(float).tiny)
    return r * r / gap + 10 * np.finfo(float).eps * op.norm_bound()


def splitting_direct(model: DoubleWellModel, h: float | None = None, tol: float = 1e-8, *,
                     reference: float | None = None, seed: int = 0, method: str = "plane") -> SplittingReport:
    """``lambda^+ - lambda^-`` for the two lowest states.

    1D: exact parity-sector reduction. 2D, ``method="plane"``: Schur complement
    on the symmetry plane (see :func:`plane_splitting`); the floor is the
    disagreement between two tail refinements. ``method="block"``: block
    eigensolve of the three lowest states; a pilot solve at ``tol`` estimates
    the splitting, and the solve is repeated with a tighter tolerance until the
    Ritz-difference error bound is at most 1/100 of it. In both cases
    splittings below 100 times the floor are UNRESOLVED and reported at the
    floor, never as zero.
    """
    if h is not None:
        model = model.at(h=h)
    cfg = model.config
    op = model.operator()
    h, mu = cfg.h, cfg.mu
    if op.grid.dim == 1:
        lm, lp, delta, um, up = sector_splitting(op)
        pm = _parity_defect(um, +1)
        pp = _parity_defect(up, -1)
        # the sector formula has relative accuracy; underflow is the only absolute limit
        floor = max(10 * np.finfo(float).eps * abs(delta), np.finfo(float).tiny)
        rep = _report(h, mu, lm, lp, delta, floor, "sector",
                      parity={"minus_even_defect": pm, "plus_odd_defect": pp},
                      reference_distance=reference)
        return rep

    if method == "plane":
        lm, lp, delta, rel, gap, plane_parity = plane_splitting(op, seed=seed)
        floor = max(rel, 1e-12) * abs(delta)
        if gap < 10 * abs(delta):
            flags_extra = ["one-well gap below 10 x splitting"]
        else:
            flags_extra = []
        pairs = None
    elif method == "block":
        cur_tol = max(tol, 1e-10)
        while True:
            pairs, srep = lowest_eigenpairs(op, 3, cur_tol, seed=seed)
            lm, lp, l3 = (p.lam for p in pairs)
            delta = lp - lm
            floor = splitting_floor(op, srep.residuals[:2], l3 - lp)
            if floor <= abs(delta) / 100 or cur_tol <= 1e-10:
                break
            cur_tol = max(1e-10, min(cur_tol / 10, math.sqrt(max(abs(delta), 1e-300) * (l3 - lp) / 100)))
        flags_extra = []
    else:
        raise ValueError(f"unknown splitting method {method!r}")
    flags = flags_extra
    parity = None
    if pairs is None and (mu == 0 or cfg.vector_potential == "zero"):
        parity = plane_parity
    elif mu == 0 or cfg.vector_potential == "zero":
        parity = {"minus_even_defect": _parity_defect(pairs[0].u, +1),
                  "plus_odd_defect": _parity_defect(pairs[1].u, -1)}
    rep = _report(h, mu, lm, lp, delta, floor, method, parity=parity, reference_distance=reference,
                  flags=flags)
    return rep


def _parity_defect(u: ComplexField, parity: int) -> float:
    v = np.asarray(u.values)
    return float(np.linalg.norm(np.flip(v, axis=-1) - parity * v) / np.linalg.norm(v))


# -- one-well problems ---------------------------------------------------------------

def one_well(model: DoubleWellModel, side: str = ">", h: float | None = None, tol: float = 1e-10,
             cut: float = 0.0, k: int = 2):
    """Ground state of the Dirichlet problem on the half-box beyond ``x_d = cut``.

    ``side=">"`` keeps ``x_d > cut``, ``side="<"`` keeps ``x_d < -cut`` (so the
    two sides are mirror images). Returns ``(mu_A, u, lambda_2)`` with ``u``
    extended by zero to the full grid and normalised there.
    """
    if side not in (">", "<"):
        raise ValueError(f"side must be '>' or '<', got {side!r}")
    if h is not None:
        model = model.at(h=h)
    cfg = model.config
    grid = cfg.grid()
    xd = grid.axes[-1]
    j = int(np.argmin(np.abs(xd - cut)))
    if abs(xd[j] - cut) > 1e-9 * grid.spacing[-1]:
        raise ValueError(f"cut x_d = {cut} is not a grid plane")
    keep = np.zeros(grid.shape, dtype=bool)
    sl = [slice(None)] * grid.dim
    sl[-1] = slice(j + 1, None)
    keep[tuple(sl)] = True
    if side == "<":
        keep = np.flip(keep, axis=-1)
    full = assemble(cfg)
    sub_grid = grid.with_excluded(~keep | (grid.excluded if grid.excluded is not None else False))
    op = MagneticOperator(sub_grid, ScalarField(sub_grid, full.V.values), full.A, full.h, full.mu, full.phases)
    if grid.dim == 1:
        pairs, _ = _one_well_1d(op, k)
    else:
        pairs, _ = lowest_eigenpairs(op, k, tol)
    u = ComplexField(grid, np.asarray(pairs[0].u.values))
    lam2 = pairs[1].lam if len(pairs) > 1 else float("nan")
    return pairs[0].lam, u, lam2


def _one_well_1d(op: MagneticOperator, k: int):
    from .eigen import _finish

    idx = op.interior_index()
    M = op.to_sparse()
    d = np.real(M.diagonal())
    e = -np.full(d.size - 1, op.hopping[0])
    lam, vec = sla.eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1))
    full = np.zeros((op.grid.size, k))
    full[idx] = vec
    return _finish(op, lam, full, 0, True, "tridiagonal", 1e-12)


def quasimodes(u_gt: ComplexField, u_lt: ComplexField):
    """Orthonormal ``(u_plus, u_minus)`` from ``(u> - u<)/sqrt2`` and ``(u> + u<)/sqrt2``."""
    g = u_gt.grid
    a = np.asarray(u_gt.values, dtype=complex)
    b = np.asarray(u_lt.values, dtype=complex)
    um = (a + b) / np.sqrt(2)
    up = (a - b) / np.sqrt(2)
    um /= norm(g, um)
    up = up - inner(g, um, up) * um
    up /= norm(g, up)
    return ComplexField(g, up), ComplexField(g, um)


def rayleigh(op: MagneticOperator, u: ComplexField) -> float:
    v = np.asarray(u.values)
    return float(np.real(np.vdot(v, op.apply(v)) / np.vdot(v, v)))


def gap_formula(u_gt: ComplexField, u_lt: ComplexField, model: DoubleWellModel, h: float | None = None,
                return_imag: bool = False):
    """Surface-integral estimate of the splitting on ``x_d = 0``.

    ``h^2 int (conj(u>) d_n u< - u< d_n conj(u>)) dS
    + h int (conj(u>) <mu A, n> u< - conj(u<) <mu A, n> u>) dS``, with ``n``
    the outward normal of the ``>`` half-space (``-e_d``), centred differences
    across the plane and node quadrature on it. Returns the real part (and the
    imaginary residue when ``return_imag``).
    """
    cfg = model.config if h is None else model.config.with_(h=h)
    grid = u_gt.grid
    if not grid.is_symmetric(-1):
        raise ValueError("the plane x_d = 0 must be a grid plane")
    h = cfg.h
    a = np.asarray(u_gt.values, dtype=complex)
    b = np.asarray(u_lt.values, dtype=complex)
    c = grid.shape[-1] // 2
    dx = grid.spacing[-1]

    def plane(f, j):
        return f[..., j]

    dn_b = -(plane(b, c + 1) - plane(b, c - 1)) / (2 * dx)
    dn_a = -(plane(a, c + 1) - plane(a, c - 1)) / (2 * dx)
    ga, gb = plane(a, c), plane(b, c)
    ds = float(np.prod(grid.spacing[:-1])) if grid.dim > 1 else 1.0
    first = h**2 * np.sum(np.conj(ga) * dn_b - gb * np.conj(dn_a)) * ds
    second = 0.0
    if cfg.mu > 0 and cfg.vector_potential != "zero":
        A = cfg.sample_vector_potential(grid)
        an = -plane(A.values[-1], c)
        second = h * np.sum(np.conj(ga) * cfg.mu * an * gb - np.conj(gb) * cfg.mu * an * ga) * ds
    total = complex(first + second)
    if return_imag:
        return total.real, total.imag
    return total.real


def gap_estimate(model: DoubleWellModel, h: float | None = None, cut: float | None = None,
                 tol: float = 1e-10) -> float:
    """Gap formula evaluated on mirror-image one-well states.

    The wall of the ``>`` problem sits at ``x_d = cut`` (default: halfway to the
    opposite well), so both states are non-zero on the plane ``x_d = 0``.
    """
    if h is not None:
        model = model.at(h=h)
    if cut is None:
        cut = 0.5 * model.well_lower[-1]
    cut = nearest_plane(model, cut)
    _, u_gt, _ = one_well(model, ">", tol=tol, cut=cut)
    u_lt = reflect_state(u_gt, conjugate=model.config.mu > 0)
    return gap_formula(u_gt, u_lt, model)


def nearest_plane(model: DoubleWellModel, x: float) -> float:
    """Grid plane ``x_d = const`` closest to ``x``."""
    xd = model.config.grid().axes[-1]
    return float(xd[int(np.argmin(np.abs(xd - x)))])


def wall_mass(u: ComplexField, lower: float, upper: float) -> float:
    """Mass of ``u`` in the slab ``lower <= x_d <= upper``."""
    g = u.grid
    xd = g.coords()[-1]
    sel = (xd >= lower) & (xd <= upper)
    return float(np.sum(np.abs(np.asarray(u.values)[sel]) ** 2) * g.cell_volume)


# -- distances ------------------------------------------------------------------------

def reference_distance(model: DoubleWellModel, regime: str = "scalar", *, details: bool = False):
    """Distance between the wells that sets the expected rate.

    ``scalar``: speed ``sqrt(V)``; ``magnetic``: speed ``mu |A|``;
    ``perturbative``: speed ``sqrt(V)`` plus the sup of ``|mu^2|A|^2 - V|`` on
    a tube around the traced geodesic. With ``details`` a dict is returned
    instead of the bare number.
    """
    cfg = model.config
    grid = cfg.grid()
    V = cfg.sample_potential(grid)
    out: dict = {"regime": regime}
    if regime in ("scalar", "perturbative"):
        speed = np.sqrt(np.maximum(V.values, 0.0))
        for w in (model.well_upper, model.well_lower):
            if not _in_zero_set(grid, speed, w):
                raise ValueError(f"well {w} is not in the zero set of sqrt(V)")
        dist = well_to_well(V, 0.0, model.well_upper, model.well_lower)
        out["distance"] = dist
        if regime == "perturbative":
            A = cfg.sample_vector_potential(grid)
            src = point_source(grid, model.well_lower)
            wf = solve_eikonal(ScalarField(grid, speed), src)
            pts, _ = trace_geodesic(wf, model.well_upper)
            tube = _tube(grid, pts, 2 * max(grid.spacing))
            eps = np.abs(cfg.mu**2 * A.norm_squared() - V.values)
            out["epsilon"] = float(np.max(eps[tube]))
    elif regime == "magnetic":
        A = cfg.sample_vector_potential(grid)
        speed = cfg.mu * np.sqrt(A.norm_squared())
        out["wells_in_zero_set"] = all(_in_zero_set(grid, speed, w)
                                       for w in (model.well_upper, model.well_lower))
        wf = solve_eikonal(ScalarField(grid, speed), point_source(grid, model.well_lower))
        dist = float(wf.values[grid.nearest_node(model.well_upper)])
        out["distance"] = dist
        line = straight_action(grid, speed, model.well_lower, model.well_upper)
        out["straight_path"] = line
        out["differs"] = bool(abs(dist - line) > 0.02 * max(abs(line), 1e-300))
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return out if details else out["distance"]


def _in_zero_set(grid, speed: np.ndarray, x) -> bool:
    """Speed at the node nearest ``x`` vanishes up to its variation over one cell."""
    node = grid.nearest_node(x)
    c = speed[node]
    slack = 1e-8
    for k in range(grid.dim):
        for s in (-1, 1):
            nb = list(node)
            nb[k] += s
            if 0 <= nb[k] < grid.shape[k]:
                slack = max(slack, abs(speed[tuple(nb)] - c))
    return bool(c <= slack)


def straight_action(grid, speed: np.ndarray, a, b, samples: int = 2001) -> float:
    """``int c dl`` along the segment from ``a`` to ``b`` (trapezoid, linear interpolation)."""
    from .eikonal import path_action

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a + np.linspace(0, 1, samples)[:, None] * (b - a)
    return path_action(grid, speed, pts)


def _tube(grid, pts: np.ndarray, radius: float) -> np.ndarray:
    xs = np.stack([c.ravel() for c in grid.coords()], axis=1)
    best = np.full(len(xs), np.inf)
    for p in pts[:: max(1, len(pts) // 400)]:
        best = np.minimum(best, np.sum((xs - p) ** 2, axis=1))
    return (best <= radius**2).reshape(grid.shape)


def magnetic_distance(model: DoubleWellModel, A_field, mu: float) -> float:
    """``S_A`` for an explicitly supplied vector field (speed ``mu |A|``)."""
    grid = A_field.grid
    wf = solve_eikonal(ScalarField(grid, mu * np.sqrt(A_field.norm_squared())),
                       point_source(grid, model.well_lower))
    return float(wf.values[grid.nearest_node(model.well_upper)])


# -- sweeps ----------------------------------------------------------------------------

@dataclass
class SweepResult:
    reports: list[SplittingReport]
    summary: dict

    def to_dict(self) -> dict:
        return {"cells": [r.to_dict() for r in self.reports], "summary": self.summary}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.reports:
                w.writerow([_fmt(v) for v in r.row()])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.16e}"
    return "" if v is None else v


def enhancement_summary(reports: Sequence[SplittingReport], h_list, mu_list) -> dict:
    """Per ``mu`` column: ``rate(mu) - rate(0)`` by ``h`` and PASS/FAIL/INCONCLUSIVE.

    ``status`` follows the strict rule (any UNRESOLVED cell in the column or
    the baseline makes it INCONCLUSIVE); ``resolved_status`` applies the same
    test to the resolved cells only and needs at least two of them.
    """
    base_col = list(mu_list).index(0.0) if 0.0 in mu_list else None
    if base_col is None:
        raise ValueError("the mu list needs a mu = 0 baseline")
    nh = len(h_list)
    grid = [[reports[i * len(mu_list) + j] for j in range(len(mu_list))] for i in range(nh)]
    out = {}
    for j, mu in enumerate(mu_list):
        if j == base_col:
            continue
        diffs = []
        resolved = []
        for i in range(nh):
            a, b = grid[i][j], grid[i][base_col]
            ok = a.status == RESOLVED and b.status == RESOLVED
            diffs.append(a.rate - b.rate)
            resolved.append(ok)
        out[f"{j}:{mu}"] = {
            "mu": mu,
            "h": list(h_list),
            "enhancement": diffs,
            "resolved": resolved,
            "min": min(diffs),
            "status": _verdict(diffs) if all(resolved) else "INCONCLUSIVE",
            "resolved_status": _verdict([d for d, r in zip(diffs, resolved) if r], need=2),
        }
    return out


def _verdict(diffs, need: int = 1) -> str:
    if len(diffs) < need:
        return "INCONCLUSIVE"
    tail = diffs[-3:]
    positive = all(d > 0 for d in diffs)
    monotone = all(tail[i + 1] >= tail[i] for i in range(len(tail) - 1))
    return "PASS" if positive and monotone else "FAIL"


def rate_sweep(model: DoubleWellModel, h_list: Sequence[float], mu_list: Sequence[float],
               tol: float = 1e-8, *, reference: float | None = None, seed: int = 0) -> SweepResult:
    """Splitting reports on the ``h x mu`` table (row-major in ``h``) and the enhancement summary."""
    h_list = [float(h) for h in h_list]
    mu_list = [float(m) for m in mu_list]
    if any(h_list[i + 1] >= h_list[i] for i in range(len(h_list) - 1)):
        raise ValueError("h list must be sorted strictly descending")
    if reference is None:
        try:
            reference = reference_distance(model)
        except ValueError:
            reference = None
    cache: dict = {}
    reports = []
    for h in h_list:
        for mu in mu_list:
            key = (h, mu)
            if key not in cache:
                m = model.at(h=h, mu=mu)
                cache[key] = splitting_direct(m, tol=tol, reference=reference, seed=seed)
            reports.append(replace(cache[key]))
    return SweepResult(reports, enhancement_summary(reports, h_list, mu_list))
