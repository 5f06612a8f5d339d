import numpy as np
import pytest

from agmonlab.eigen import EigenSolveError, dense_eigenpairs, lowest_eigenpairs, refine_tails, residual
from agmonlab.model import ModelConfig
from agmonlab.operator import assemble


def harmonic_1d(n=201, h=0.1):
    return assemble(ModelConfig(h=h, potential="harmonic", lower=-3, upper=3, points=n))


def test_harmonic_oscillator_levels():
    op = harmonic_1d(801)
    pairs, rep = lowest_eigenpairs(op, 4, 1e-9)
    assert rep.converged
    np.testing.assert_allclose([p.lam for p in pairs], [0.1, 0.3, 0.5, 0.7], rtol=1e-3)
    assert all(p.residual <= 1e-9 for p in pairs)


def test_landau_harmonic_ground_state_on_fine_box():
    h, mu = 0.1, 2.0
    op = assemble(ModelConfig(h=h, mu=mu, vector_potential="symmetric-gauge", lower=(-2.5, -2.5),
                              upper=(2.5, 2.5), points=(161, 161)))
    (p,), _ = lowest_eigenpairs(op, 1, 1e-8)
    assert p.lam == pytest.approx(2 * np.sqrt(1 + mu**2 / 4) * h, rel=3e-3)


def test_matches_dense_oracle():
    op = assemble(ModelConfig(h=0.15, mu=1.5, vector_potential="symmetric-gauge", potential="quartic-double-well",
                              lower=(-1.5, -2), upper=(1.5, 2), points=(25, 29)))
    it, _ = lowest_eigenpairs(op, 4, 1e-10)
    de, _ = dense_eigenpairs(op, 4)
    np.testing.assert_allclose([p.lam for p in it], [p.lam for p in de], atol=1e-10)
    for a, b in zip(it, de):
        assert abs(abs(np.vdot(a.u.values, b.u.values)) * op.grid.cell_volume - 1) < 1e-8


def test_orthonormal_and_sorted():
    op = harmonic_1d()
    pairs, rep = lowest_eigenpairs(op, 5, 1e-9)
    lam = [p.lam for p in pairs]
    assert lam == sorted(lam)
    assert rep.orthogonality_defect < 1e-10


def test_deterministic_for_seed():
    op = harmonic_1d()
    a, _ = lowest_eigenpairs(op, 2, 1e-9, seed=3)
    b, _ = lowest_eigenpairs(op, 2, 1e-9, seed=3)
    assert [p.lam for p in a] == [p.lam for p in b]
    np.testing.assert_array_equal(a[1].u.values, b[1].u.values)


@pytest.mark.parametrize("k", [0, 9])
def test_k_out_of_range(k):
    with pytest.raises(ValueError, match="k out of range"):
        lowest_eigenpairs(harmonic_1d(), k, 1e-8)


def test_tolerance_floor():
    with pytest.raises(ValueError, match="tol"):
        lowest_eigenpairs(harmonic_1d(), 1, 1e-12)


def test_iteration_cap_raises_with_best_pairs():
    with pytest.raises(EigenSolveError) as info:
        lowest_eigenpairs(harmonic_1d(), 2, 1e-9, maxiter=2)
    assert len(info.value.pairs) == 2 and not info.value.report.converged


def test_refine_tails_resolves_tiny_values():
    op = harmonic_1d(401, h=0.05)
    (p,), _ = lowest_eigenpairs(op, 1, 1e-8)
    x = op.grid.axes[0]
    q = refine_tails(op, p, 0.9 * x**2 / 2)
    # continuum ground state exp(-x^2/(2h)); the lattice rate differs by O((dx/h)^2)
    inner = np.abs(x) <= 2.5
    rho = -op.h * np.log(np.abs(q.u.values[inner]))
    rho -= rho.min()
    assert np.abs(q.u.values[inner]).min() < 1e-25
    np.testing.assert_allclose(rho, x[inner] ** 2 / 2, rtol=0.02, atol=0.005)
    assert q.lam == pytest.approx(p.lam, abs=1e-9)
    assert residual(op, q) < 1e-8
