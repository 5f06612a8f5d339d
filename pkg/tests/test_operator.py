import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agmonlab.catalog import sample_gauge
from agmonlab.grid import ComplexField, build_grid
from agmonlab.model import ModelConfig
from agmonlab.operator import assemble, edge_integrals, gauge_state, gauge_transform

MODELS = {
    "landau": ModelConfig(h=0.2, mu=2.0, vector_potential="symmetric-gauge", lower=(-2, -2), upper=(2, 2),
                          points=(13, 11)),
    "ab": ModelConfig(h=0.3, mu=1.0, vector_potential="aharonov-bohm", vector_params={"flux": 0.4},
                      hole_radius=0.3, links="exact", lower=(-2, -2), upper=(2, 2), points=(15, 15)),
    "quartic1d": ModelConfig(h=0.1, potential="quartic-double-well", lower=-2, upper=2, points=31),
}


def _random(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@given(name=st.sampled_from(sorted(MODELS)), seed=st.integers(0, 2**32 - 1))
def test_hermitian(name, seed):
    op = assemble(MODELS[name])
    rng = np.random.default_rng(seed)
    u = np.where(op.grid.interior, _random(rng, op.grid.shape), 0)
    v = np.where(op.grid.interior, _random(rng, op.grid.shape), 0)
    a = np.vdot(u, op.apply(v))
    b = np.conj(np.vdot(v, op.apply(u)))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


@given(name=st.sampled_from(sorted(MODELS)), seed=st.integers(0, 2**32 - 1))
def test_nonnegative_kinetic_part(name, seed):
    op = assemble(MODELS[name])
    rng = np.random.default_rng(seed)
    u = np.where(op.grid.interior, _random(rng, op.grid.shape), 0)
    q = np.vdot(u, op.apply(u) - op.V.values * u).real
    assert q >= -1e-10 * np.vdot(u, u).real


@pytest.mark.parametrize("name", sorted(MODELS))
def test_sparse_matches_matrix_free(name):
    op = assemble(MODELS[name])
    rng = np.random.default_rng(1)
    u = np.where(op.grid.interior, _random(rng, op.grid.shape), 0)
    np.testing.assert_allclose(op.scatter(op.to_sparse() @ op.gather(u)), op.apply(u), atol=1e-12)
    M = op.dense()
    np.testing.assert_allclose(M, M.conj().T, atol=1e-14)


def test_batched_apply():
    op = assemble(MODELS["landau"])
    U = np.random.default_rng(0).standard_normal(op.grid.shape + (3,))
    out = op.apply(U)
    for j in range(3):
        np.testing.assert_allclose(out[..., j], op.apply(U[..., j]))


def test_real_without_field():
    op = assemble(MODELS["quartic1d"])
    assert op.is_real and np.isrealobj(op.to_sparse().toarray())
    assert not assemble(MODELS["landau"]).is_real


def test_dirichlet_nodes_stay_zero():
    op = assemble(MODELS["ab"])
    out = op.apply(np.ones(op.grid.shape))
    assert np.all(out[op.grid.dirichlet] == 0)


@given(cid=st.sampled_from(["linear", "bilinear", "sine"]), alpha=st.floats(-1, 1), seed=st.integers(0, 1000))
def test_exact_gauge_covariance(cid, alpha, seed):
    """``P_{A + grad chi} (e^{i mu chi/h} u) = e^{i mu chi/h} P_A u`` on the lattice."""
    op = assemble(MODELS["landau"])
    params = {"alpha": alpha, "k": 1.1}
    op2 = gauge_transform(op, cid, params, "exact")
    chi = sample_gauge(cid, params, op.grid)
    rng = np.random.default_rng(seed)
    u = np.where(op.grid.interior, _random(rng, op.grid.shape), 0)
    lhs = op2.apply(gauge_state(u, chi, op.h, op.mu))
    rhs = gauge_state(op.apply(u), chi, op.h, op.mu)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_midpoint_gauge_is_second_order():
    errs = []
    for n in (17, 33):
        m = MODELS["landau"].with_(points=(n, n))
        op = assemble(m)
        ex = gauge_transform(op, "sine", {"alpha": 0.3, "k": 1.0}, "exact")
        mid = gauge_transform(op, "sine", {"alpha": 0.3, "k": 1.0}, "midpoint")
        errs.append(max(np.abs(a - b).max() for a, b in zip(ex.phases, mid.phases)))
    assert errs[1] < errs[0] / 3


def test_edge_integrals_exact_for_linear_field():
    m = MODELS["landau"]
    A = m.sample_vector_potential()
    g = A.grid
    x, y = g.coords()
    dx, dy = g.spacing
    I = edge_integrals(A)
    np.testing.assert_allclose(I[0], -0.5 * y[:-1, :] * dx)
    np.testing.assert_allclose(I[1], 0.5 * x[:, :-1] * dy)


def test_norm_bound_dominates_spectrum():
    op = assemble(MODELS["landau"])
    lam = np.linalg.eigvalsh(op.dense())
    assert lam.max() <= op.norm_bound() and lam.min() >= 0


def test_apply_rejects_wrong_grid():
    op = assemble(MODELS["landau"])
    with pytest.raises(ValueError):
        op.apply(ComplexField(build_grid((0, 0), (1, 1), (13, 11)), np.zeros((13, 11))))
    with pytest.raises(ValueError):
        op.apply(np.zeros((5, 5)))
