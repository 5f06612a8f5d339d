"""Lowest eigenpairs of a MagneticOperator.

The main path is a preconditioned block iteration in the LOBPCG family:
each step takes Rayleigh-Ritz over ``[X, W, P]`` with ``W`` the diagonally
preconditioned residuals and ``P`` the previous search directions. No inner
linear solves are performed. A dense (or banded, in 1D) path is kept as an
oracle for small problems.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .grid import ComplexField
from .operator import MagneticOperator

log = logging.getLogger(__name__)

MAX_K = 8
MAX_ITER = 5000


@dataclass(frozen=True)
class EigenPair:
    lam: float
    u: ComplexField
    residual: float


@dataclass
class SolveReport:
    iterations: int
    residuals: list[float]
    orthogonality_defect: float
    converged: bool
    near_degenerate: list[tuple[int, int]] = field(default_factory=list)
    method: str = "lobpcg"

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "orthogonality_defect": float(self.orthogonality_defect),
            "converged": self.converged,
            "near_degenerate": [list(p) for p in self.near_degenerate],
            "method": self.method,
        }


class EigenSolveError(RuntimeError):
    """Iteration cap reached; carries the best pairs and report found."""

    def __init__(self, message, pairs, report):
        super().__init__(message)
        self.pairs = pairs
        self.report = report


def _fix_phase(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    if v[i] == 0:
        return v
    return v * (abs(v[i]) / v[i])


def residual(op: MagneticOperator, pair: EigenPair) -> float:
    """``||P u - lam u|| / ||u||`` in the node-quadrature norm."""
    if not pair.u.grid.same_as(op.grid):
        raise ValueError("eigenpair lives on a different grid")
    u = pair.u.values
    r = op.apply(u) - pair.lam * u
    return float(np.linalg.norm(r) / np.linalg.norm(u))


def _finish(op, lam, vecs, it, converged, method, tol):
    """Normalise, phase-fix and package the first ``len(lam)`` columns."""
    g = op.grid
    dv = g.cell_volume
    pairs = []
    res = []
    for j in range(len(lam)):
        v = _fix_phase(vecs[:, j])
        v = v / np.sqrt(np.sum(np.abs(v) ** 2) * dv)
        u = v.reshape(g.shape)
        if op.is_real and np.all(np.imag(u) == 0):
            u = u.real
        u = np.where(g.interior, u, 0)
        r = float(np.linalg.norm(op.apply(u) - lam[j] * u) / np.linalg.norm(u))
        res.append(r)
        pairs.append(EigenPair(float(lam[j]), ComplexField(g, u), r))
    U = np.stack([p.u.values.ravel() for p in pairs], axis=1)
    gram = U.conj().T @ U * dv
    defect = float(np.max(np.abs(gram - np.eye(len(pairs))))) if len(pairs) > 1 else 0.0
    near = [(i, i + 1) for i in range(len(pairs) - 1) if abs(pairs[i + 1].lam - pairs[i].lam) < 10 * tol]
    report = SolveReport(it, res, defect, converged, near, method)
    return pairs, report


def lowest_eigenpairs(op: MagneticOperator, k: int = 1, tol: float = 1e-8, *, seed: int = 0,
                      maxiter: int = MAX_ITER, method: str = "lobpcg", guard: int = 2,
                      x0: np.ndarray | None = None):
    """The ``k`` lowest eigenpairs, sorted ascending, each with residual <= tol.

    Raises EigenSolveError when the iteration cap is hit before convergence.
    """
    if not 1 <= k <= MAX_K:
        raise ValueError(f"k out of range: need 1 <= k <= {MAX_K}, got {k}")
    if tol < 1e-10:
        raise ValueError(f"tol must be >= 1e-10, got {tol}")
    if method == "dense":
        return dense_eigenpairs(op, k, tol=tol)
    if method != "lobpcg":
        raise ValueError(f"unknown method {method!r}")

    g = op.grid
    n = g.size
    mask = g.interior.ravel()
    n_free = int(mask.sum())
    m = min(k + guard, n_free)
    real = op.is_real
    dtype = float if real else complex
    rng = np.random.default_rng(seed)

    def A(X):
        return op.apply(X.reshape(g.shape + (X.shape[1],))).reshape(n, X.shape[1])

    diag = op.diagonal().ravel()
    inv_diag = np.where(mask, 1.0 / np.where(mask, diag, 1.0), 0.0)

    if x0 is not None:
        X = np.asarray(x0, dtype=dtype).reshape(n, -1)
        if X.shape[1] < m:
            X = np.hstack([X, rng.standard_normal((n, m - X.shape[1]))])
    else:
        X = rng.standard_normal((n, m))
        if not real:
            X = X + 1j * rng.standard_normal((n, m))
    X = (X * mask[:, None]).astype(dtype)
    X, _ = np.linalg.qr(X)
    AX = A(X)
    theta, C = np.linalg.eigh(_herm(X.conj().T @ AX))
    X, AX = X @ C, AX @ C

    P = None
    res = np.full(m, np.inf)
    it = 0
    for it in range(1, maxiter + 1):
        R = AX - X * theta
        res = np.linalg.norm(R, axis=0)
        if np.all(res[:k] <= tol):
            break
        active = res > tol
        W = R[:, active] * inv_diag[:, None]
        Y = W if P is None else np.hstack([W, P])
        Q = _orth_against(Y, X)
        if Q.shape[1] == 0:
            break
        AQ = A(Q)
        S = np.hstack([X, Q])
        AS = np.hstack([AX, AQ])
        evals, C = np.linalg.eigh(_herm(S.conj().T @ AS))
        C = C[:, :m]
        X_new, AX_new = S @ C, AS @ C
        P = Q @ C[m:, active] if np.any(active) else None
        X, AX, theta = X_new, AX_new, evals[:m]
        if it % 50 == 0:
            # refresh against slow loss of orthogonality
            X, _ = np.linalg.qr(X)
            AX = A(X)
            theta, C = np.linalg.eigh(_herm(X.conj().T @ AX))
            X, AX = X @ C, AX @ C
            if P is not None:
                P = _orth_against(P, X)
                if P.shape[1] == 0:
                    P = None
    converged = bool(np.all(res[:k] <= tol))
    pairs, report = _finish(op, theta[:k], X[:, :k], it, converged, "lobpcg", tol)
    log.debug("lobpcg: %d iterations, residuals %s", it, report.residuals)
    if not converged:
        raise EigenSolveError(
            f"no convergence after {it} iterations; best residuals {[float(r) for r in res[:k]]}",
            pairs, report)
    return pairs, report


def _herm(H):
    return 0.5 * (H + H.conj().T)


def _orth_against(Y: np.ndarray, X: np.ndarray, drop: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``Y`` projected off ``span(X)``, rank-revealing."""
    norms = np.linalg.norm(Y, axis=0)
    Y = Y[:, norms > 0] / norms[norms > 0]
    if Y.shape[1] == 0:
        return Y
    for _ in range(2):
        Y = Y - X @ (X.conj().T @ Y)
    Q, Rq, _ = sla.qr(Y, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rq))
    keep = d > drop * max(d.max(), 1.0)
    Q = Q[:, keep]
    # one more pass so Q is orthogonal to X to working precision
    Q = Q - X @ (X.conj().T @ Q)
    Q, _ = np.linalg.qr(Q)
    return Q


def dense_eigenpairs(op: MagneticOperator, k: int = 1, tol: float = 1e-8):
    """Oracle: dense eigensolve (banded in 1D, so long 1D grids are allowed)."""
    idx = op.interior_index()
    M = op.to_sparse()
    if op.grid.dim == 1 and op.grid.excluded is None:
        n = M.shape[0]
        diag = M.diagonal()
        off = M.diagonal(-1)
        if op.is_real:
            lam, vec = sla.eigh_tridiagonal(np.real(diag), np.real(off), select="i", select_range=(0, k - 1))
        else:
            ab = np.zeros((2, n), dtype=complex)
            ab[0] = diag
            ab[1, :-1] = off
            lam, vec = sla.eig_banded(ab, lower=True, select="i", select_range=(0, k - 1))
    else:
        lam, vec = sla.eigh(op.dense(), subset_by_index=(0, k - 1))
    full = np.zeros((op.grid.size, k), dtype=vec.dtype)
    full[idx] = vec
    return _finish(op, lam, full, 0, True, "dense", tol)


def refine_tails(op: MagneticOperator, pair: EigenPair, weight=None, *, iterations: int = 8,
                 shift: float | None = None) -> EigenPair:
    """Recompute ``pair.u`` with pointwise relative accuracy in its decaying tails.

    Block iterations control ``||Pu - lam u||`` in absolute terms, which leaves
    tails below ~tol as noise. Here a few inverse-iteration steps are run on
    ``exp(Psi/h) P exp(-Psi/h)`` (same spectrum, eigenvector ``exp(Psi/h) u``)
    with a sparse LU factorisation, so exponentially small values of ``u`` are
    carried as O(1) numbers. ``weight`` (``Psi``) must not exceed the true decay
    rate ``-h log|u|``; ``(1 - delta) Phi_A`` is a safe choice. Values of ``u``
    below the double-precision range come back as 0.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    g = op.grid
    M = op.to_sparse().tocoo()
    psi = np.zeros(M.shape[0]) if weight is None else op.gather(
        weight.values if hasattr(weight, "values") else np.asarray(weight, dtype=float))
    scale = np.exp((psi[M.row] - psi[M.col]) / op.h)
    Mw = sp.coo_matrix((M.data * scale, (M.row, M.col)), shape=M.shape).tocsc()
    if shift is None:
        shift = 1e-9 * max(1.0, abs(pair.lam))
    sigma = pair.lam - shift
    lu = spla.splu((Mw - sigma * sp.identity(M.shape[0], format="csc")).tocsc())
    w = np.ones(M.shape[0], dtype=Mw.dtype)
    for _ in range(iterations):
        w = lu.solve(w)
        w /= np.abs(w).max()
    with np.errstate(divide="ignore"):
        logu = np.log(np.abs(w)) - psi / op.h
    phase = w / np.abs(np.where(w == 0, 1, w))
    shift_log = logu.max()
    v = np.exp(logu - shift_log) * phase
    v = op.scatter(v)
    v = _fix_phase(v.ravel()).reshape(g.shape)
    v = v / np.sqrt(np.sum(np.abs(v) ** 2) * g.cell_volume)
    lam = float(np.real(np.vdot(v, op.apply(v)) / np.vdot(v, v)))
    r = float(np.linalg.norm(op.apply(v) - lam * v) / np.linalg.norm(v))
    return EigenPair(lam, ComplexField(g, v), r)
