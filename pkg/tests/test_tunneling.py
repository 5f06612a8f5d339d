import math

import numpy as np
import pytest

from agmonlab import tunneling as tn
from agmonlab.grid import ComplexField
from agmonlab.model import ModelConfig

QUARTIC_1D = ModelConfig(h=0.1, potential="quartic-double-well", lower=-2.5, upper=2.5, points=1025)
QUARTIC_2D = ModelConfig(h=0.15, potential="quartic-double-well", vector_potential="symmetric-gauge",
                         lower=(-1.5, -2), upper=(1.5, 2), points=(49, 61))


@pytest.fixture(scope="module")
def dw1():
    return tn.make_double_well(QUARTIC_1D)


def test_double_well_metadata(dw1):
    assert dw1.well_upper == (1.0,) and dw1.well_lower == (-1.0,)
    assert dw1.potential_defect == 0 and dw1.dim == 1


def test_rejects_asymmetric_grid():
    with pytest.raises(ValueError, match="symmetric"):
        tn.make_double_well(QUARTIC_1D.with_(lower=(-2.4,)))
    with pytest.raises(ValueError, match="symmetric"):
        tn.make_double_well(QUARTIC_1D.with_(points=(1024,)))


def test_rejects_odd_potential(tmp_path):
    g = QUARTIC_1D.grid()
    x = g.axes[0]
    vals = (x**2 - 1) ** 2 + 0.1 * x
    m = QUARTIC_1D.with_(potential="custom-table", potential_params={"values": vals.tolist()})
    with pytest.raises(ValueError, match="not even"):
        tn.make_double_well(m)


def test_rejects_field_breaking_conjugated_reflection():
    m = QUARTIC_2D.with_(mu=1.0, vector_potential="pure-gradient",
                         vector_params={"chi": "linear", "chi_params": {"k": [1.0, 0.0]}})
    # A_1 must be odd in x_d; a constant A_1 breaks the link-phase match
    with pytest.raises(ValueError, match="link defect"):
        tn.make_double_well(m)


def test_symmetric_gauge_accepted_with_field():
    dw = tn.make_double_well(QUARTIC_2D.with_(mu=1.0))
    assert dw.vector_defect <= 1e-10 and dw.reflected_residual <= 1e-7


def test_sector_splitting_matches_multiprecision_oracle(dw1):
    op = dw1.operator()
    lm, lp, delta, um, up = tn.sector_splitting(op)
    o = tn.sturm_oracle(op, guess=(lm, lp))
    ref = float(o[1] - o[0])
    assert delta == pytest.approx(ref, rel=1e-8)
    assert lm == pytest.approx(float(o[0]), rel=1e-12)


def test_splitting_report_fields(dw1):
    rep = tn.splitting_direct(dw1, h=0.07)
    assert rep.status == tn.RESOLVED and rep.delta > 0 and rep.method == "sector"
    assert rep.lambda_plus - rep.lambda_minus == pytest.approx(rep.delta, rel=1e-6)
    assert rep.rate == pytest.approx(-0.07 * math.log(rep.delta))
    assert rep.parity["minus_even_defect"] < 1e-10 and rep.parity["plus_odd_defect"] < 1e-10
    assert len(rep.row()) == len(tn.SWEEP_COLUMNS)


def test_unresolved_reported_at_floor():
    rep = tn._report(0.1, 0.0, 1.0, 1.0, 1e-20, 1e-15, "block")
    assert rep.status == tn.UNRESOLVED and rep.delta == 1e-15
    assert rep.rate == pytest.approx(-0.1 * math.log(1e-15))
    rep = tn._report(0.1, 0.0, 1.0, 1.0, -1e-18, 1e-15, "block")
    assert rep.status == tn.UNRESOLVED and rep.delta == 1e-15


def test_plane_matches_block_in_2d():
    dw = tn.make_double_well(QUARTIC_2D)
    a = tn.splitting_direct(dw, method="plane")
    b = tn.splitting_direct(dw, method="block", tol=1e-10)
    assert a.status == b.status == tn.RESOLVED
    assert a.delta == pytest.approx(b.delta, rel=1e-5)
    assert a.parity["minus_even_defect"] < 1e-6


def test_one_well_mirror_images(dw1):
    m_gt, u_gt, lam2 = tn.one_well(dw1, ">", h=0.1)
    m_lt, u_lt, _ = tn.one_well(dw1, "<", h=0.1)
    assert m_gt == pytest.approx(m_lt, abs=1e-12)
    np.testing.assert_allclose(np.abs(tn.reflect_state(u_gt).values), np.abs(u_lt.values), atol=1e-10)
    rep = tn.splitting_direct(dw1, h=0.1)
    assert lam2 - m_gt > 10 * rep.delta
    assert rep.lambda_minus <= m_gt <= rep.lambda_plus + 1e-12
    with pytest.raises(ValueError, match="grid plane"):
        tn.one_well(dw1, ">", cut=0.0013)
    with pytest.raises(ValueError, match="side"):
        tn.one_well(dw1, "?")


def test_quasimodes_orthonormal(dw1):
    _, u_gt, _ = tn.one_well(dw1, ">", cut=tn.nearest_plane(dw1, -0.5))
    u_lt = tn.reflect_state(u_gt)
    up, um = tn.quasimodes(u_gt, u_lt)
    g = up.grid
    assert np.vdot(up.values, um.values) * g.cell_volume == pytest.approx(0, abs=1e-12)
    assert np.vdot(up.values, up.values).real * g.cell_volume == pytest.approx(1)
    op = dw1.operator()
    assert tn.rayleigh(op, um) < tn.rayleigh(op, up)


def test_gap_formula_real_for_symmetric_states(dw1):
    _, u_gt, _ = tn.one_well(dw1, ">", cut=tn.nearest_plane(dw1, -0.5))
    re, im = tn.gap_formula(u_gt, tn.reflect_state(u_gt), dw1, return_imag=True)
    assert re > 0 and abs(im) <= 1e-12 * re


def test_reference_distances(dw1):
    assert tn.reference_distance(dw1) == pytest.approx(4 / 3, rel=1e-3)
    with pytest.raises(ValueError, match="regime"):
        tn.reference_distance(dw1, "nope")
    dw = tn.make_double_well(QUARTIC_2D.with_(mu=2.0))
    d = tn.reference_distance(dw, "magnetic", details=True)
    # mu |A| = |x|: both the eikonal and the straight path between (0, +-1) give 1
    assert d["distance"] == pytest.approx(1.0, rel=0.03) and d["straight_path"] == pytest.approx(1.0, rel=1e-3)
    assert not d["wells_in_zero_set"]
    p = tn.reference_distance(dw, "perturbative", details=True)
    assert p["epsilon"] >= 0 and p["distance"] > 1.0


def test_sweep_requires_descending_h(dw1):
    with pytest.raises(ValueError, match="descending"):
        tn.rate_sweep(dw1, [0.05, 0.07], [0.0])


def _cell(h, mu, rate, status=tn.RESOLVED):
    return tn.SplittingReport(h=h, mu=mu, lambda_minus=0.0, lambda_plus=0.0, delta=math.exp(-rate / h),
                              rate=rate, status=status)


def test_enhancement_summary_verdicts():
    hs, mus = [0.12, 0.09, 0.07], [0.0, 2.0]
    good = [_cell(h, m, 1.0 + m * (0.6 + 0.1 * i)) for i, h in enumerate(hs) for m in mus]
    s = tn.enhancement_summary(good, hs, mus)["1:2.0"]
    assert s["status"] == "PASS" and s["resolved_status"] == "PASS"
    np.testing.assert_allclose(s["enhancement"], [1.2, 1.4, 1.6])
    bad = [_cell(h, m, 1.0 + m * (0.6 - 0.1 * i)) for i, h in enumerate(hs) for m in mus]
    assert tn.enhancement_summary(bad, hs, mus)["1:2.0"]["status"] == "FAIL"
    partial = list(good)
    partial[5] = _cell(0.07, 2.0, 99.0, tn.UNRESOLVED)
    s = tn.enhancement_summary(partial, hs, mus)["1:2.0"]
    assert s["status"] == "INCONCLUSIVE" and s["resolved_status"] == "PASS"
    partial[3] = _cell(0.09, 2.0, 99.0, tn.UNRESOLVED)
    assert tn.enhancement_summary(partial, hs, mus)["1:2.0"]["resolved_status"] == "INCONCLUSIVE"
    with pytest.raises(ValueError, match="baseline"):
        tn.enhancement_summary(good, hs, [1.0, 2.0])


def test_sweep_outputs(tmp_path, dw1):
    res = tn.rate_sweep(dw1, [0.1, 0.07], [0.0])
    res.write_csv(tmp_path / "s.csv")
    res.write_json(tmp_path / "s.json")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",") == list(tn.SWEEP_COLUMNS) and len(lines) == 3
    assert float(lines[1].split(",")[4]) == res.reports[0].delta
    assert res.reports[1].rate > res.reports[0].rate


def test_reflect_state_involution():
    g = QUARTIC_2D.grid()
    rng = np.random.default_rng(0)
    u = ComplexField(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    back = tn.reflect_state(tn.reflect_state(u, True), True)
    np.testing.assert_array_equal(back.values, u.values)
