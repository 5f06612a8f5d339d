import json
import subprocess
import sys

import pytest

from agmonlab import cli

LANDAU = """
# Landau-harmonic oracle
model.h = 0.1
model.mu = 2
model.potential = harmonic
model.vector_potential = symmetric-gauge
model.lower = -3, -3
model.upper = 3, 3
model.points = 97, 97
solve.k = 2
solve.tol = 1e-8
"""

QUARTIC = """
model.h = 0.05
model.potential = quartic-double-well
model.lower = -2.5
model.upper = 2.5
model.points = 1025
"""


@pytest.fixture
def write(tmp_path):
    def _write(text, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return p
    return _write


def _run(command, cfg, out, *extra):
    return cli.main([command, "--config", str(cfg), "--out", str(out), *extra])


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def test_parse_config_values():
    flat = cli.parse_config('a.b = 1\na.c = 2.5e-3  # comment\na.d = x, y\na.e = [1, 2]\na.f = "s"\na.g = true\n')
    assert flat == {"a.b": 1, "a.c": 2.5e-3, "a.d": ["x", "y"], "a.e": [1, 2], "a.f": "s", "a.g": True}
    assert cli.unflatten({"m.p.a": 1, "m.h": 2}) == {"m": {"p": {"a": 1}, "h": 2}}


@pytest.mark.parametrize("text, msg", [("a.b 1", "key = value"), ("A.b = 1", "malformed"),
                                       ("a.b = 1\na.b = 2", "duplicate")])
def test_parse_config_errors(text, msg):
    with pytest.raises(cli.ConfigError, match=msg):
        cli.parse_config(text)


def test_env_overrides(write, tmp_path):
    cfg = write(LANDAU)
    exp = cli.load_experiment("eig", cfg, out=tmp_path / "o",
                              environ={"AGMONLAB_MODEL__H": "0.2", "AGMONLAB_SOLVE__K": "3", "OTHER": "1"})
    assert exp.get("model.h") == 0.2 and exp.get("solve.k") == 3
    assert cli.build_model(exp).h == 0.2


def test_eig_landau_example(write, tmp_path):
    out = tmp_path / "eig"
    assert _run("eig", write(LANDAU), out) == 0
    body = json.loads((out / "eig.json").read_text())
    assert body["lambda"][0] == pytest.approx(0.28284, rel=0.01)
    assert body["solve"]["converged"] and body["schema"] == 1
    man = json.loads((out / "manifest.json").read_text())
    assert man["grid"]["points"] == [97, 97] and len(man["config_hash"]) == 64
    assert set(man["versions"]) >= {"agmonlab", "numpy", "scipy", "gmpy2"}
    assert sorted(man["outputs"]) == ["eig.json", "slice_axis1.csv", "slice_axis2.csv"]
    header = (out / "slice_axis1.csv").read_text().splitlines()[0]
    assert header == "x1,re_0,im_0,re_1,im_1"


def test_k_zero_is_validation_error(write, tmp_path, capsys):
    assert _run("eig", write(LANDAU.replace("solve.k = 2", "solve.k = 0")), tmp_path / "o") == 2
    err = _error(capsys)
    assert err["code"] == 2 and "k out of range" in err["message"]


def test_non_convergence_exit(write, tmp_path, capsys):
    assert _run("eig", write(LANDAU + "solve.maxiter = 2\n"), tmp_path / "o") == 3
    assert _error(capsys)["kind"] == "no-convergence"


@pytest.mark.parametrize("text, msg", [
    ("solve.k = 1\n", "model"),
    (LANDAU + "model.colour = red\n", "unknown model keys"),
    (LANDAU.replace("model.h = 0.1", "model.h = nan"), "not finite"),
    (LANDAU.replace("model.h = 0.1", "model.h = fast"), "must be a number"),
    (LANDAU + "seed = -1\n", "seed"),
])
def test_validation_errors(write, tmp_path, capsys, text, msg):
    assert _run("eig", write(text), tmp_path / "o") == 2
    assert msg in _error(capsys)["message"]


def test_usage_errors(write, capsys):
    assert cli.main(["eig"]) == 2
    assert _error(capsys)["kind"] == "usage"
    assert cli.main(["nope", "--config", "x"]) == 2
    assert cli.main(["eig", "--config", "/nonexistent.cfg", "--out", "/tmp/x"]) == 2
    assert "cannot read" in _error(capsys)["message"]


def test_sweep_needs_tunnel_section(write, tmp_path, capsys):
    assert _run("sweep", write(QUARTIC), tmp_path / "o") == 2
    assert "tunnel" in _error(capsys)["message"]


def test_split_quartic_example(write, tmp_path):
    out = tmp_path / "split"
    assert _run("split", write(QUARTIC), out) == 0
    body = json.loads((out / "split.json").read_text())
    assert body["splitting"]["delta"] > 0 and body["splitting"]["status"] == "RESOLVED"
    assert body["parity_labels"] == {"lambda_minus": "even", "lambda_plus": "odd"}


def test_unresolved_only_exit(write, tmp_path, capsys, monkeypatch):
    from agmonlab import tunneling

    monkeypatch.setattr(tunneling, "sector_splitting", lambda op: (1.0, 1.0, 0.0, None, None))
    monkeypatch.setattr(tunneling, "_parity_defect", lambda u, p: 0.0)
    out = tmp_path / "u"
    assert _run("split", write(QUARTIC), out) == 4
    assert _error(capsys)["kind"] == "unresolved"
    assert json.loads((out / "split.json").read_text())["splitting"]["status"] == "UNRESOLVED"


def test_sweep_and_determinism(write, tmp_path):
    text = QUARTIC + "tunnel.h_list = 0.1, 0.07\ntunnel.mu_list = 0\n"
    cfg = write(text)
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("sweep", cfg, a, "--seed", "7") == 0
    assert _run("sweep", cfg, b, "--seed", "7") == 0
    for name in ("sweep.json", "sweep.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert json.loads((a / "manifest.json").read_text())["seed"] == 7
    meta = json.loads((a / "metadata.json").read_text())
    assert {"started", "finished", "elapsed_seconds"} <= set(meta)


def test_eig_determinism_2d(write, tmp_path):
    cfg = write(LANDAU.replace("97, 97", "49, 49"))
    _run("eig", cfg, tmp_path / "a", "--seed", "3")
    _run("eig", cfg, tmp_path / "b", "--seed", "3")
    for name in ("eig.json", "slice_axis1.csv", "slice_axis2.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eikonal_command(write, tmp_path):
    text = LANDAU.replace("97, 97", "41, 41") + "eikonal.probes = [[1, 0], [0, 2]]\n"
    out = tmp_path / "e"
    assert _run("eikonal", write(text), out) == 0
    assert {p.name for p in out.iterdir()} >= {"phi0.csv", "phi1.csv", "phi_a.csv", "distances.csv"}
    rows = (out / "distances.csv").read_text().splitlines()
    assert rows[0] == "weight,x1,x2,phi" and len(rows) == 7
    _, x1, x2, phi = rows[1].split(",")
    assert float(phi) == pytest.approx((float(x1) ** 2 + float(x2) ** 2) / 2, rel=0.03)


def test_verify_command(write, tmp_path):
    text = LANDAU.replace("-3, -3", "-1.5, -1.5").replace("3, 3", "1.5, 1.5").replace("97, 97", "65, 65")
    out = tmp_path / "v"
    assert _run("verify", write(text + "verify.identities = lavine, relative_energy\n"), out) == 0
    ids = json.loads((out / "identities.json").read_text())["identities"]
    assert [r["name"] for r in ids] == ["lavine", "lavine_ground_state", "relative_energy"]
    decay = json.loads((out / "decay.json").read_text())
    assert decay["decay"]["nodes"] > 0


def test_gauge_check_command(write, tmp_path):
    text = """
model.h = 0.2
model.mu = 1
model.vector_potential = aharonov-bohm
model.vector_params.flux = 0.05
model.hole_radius = 0.35
model.links = exact
model.lower = -2, -2
model.upper = 2, 2
model.points = 33, 33
solve.tol = 1e-9
gauge.mu_list = 0, 1
"""
    out = tmp_path / "g"
    assert _run("gauge-check", write(text), out) == 0
    body = json.loads((out / "gauge.json").read_text())
    assert body["gauge_shift"]["invariant"]
    assert [f["invariant"] for f in body["flux"]] == [True, False]
    assert body["kato"]["holds"]


def test_module_entry_point(write, tmp_path):
    r = subprocess.run([sys.executable, "-m", "agmonlab", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "agmonlab" in r.stdout
    r = subprocess.run([sys.executable, "-m", "agmonlab", "eig", "--config", str(write(QUARTIC)),
                        "--out", str(tmp_path / "m"), "--threads", "1"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
