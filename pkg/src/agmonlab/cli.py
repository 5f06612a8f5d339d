"""Command-line entry point.

Usage::

    agmonlab COMMAND --config PATH [--out DIR] [--seed N] [--threads N]

Configs are flat ``section.key = value`` lines; values are JSON literals
(numbers, ``true``, ``"text"``, ``[1, 2]``), bare comma lists or bare words.
Environment variables ``AGMONLAB_SECTION__KEY`` override file entries and
the flags override both.

Exit status: 0 success, 2 invalid input, 3 eigensolver did not converge,
4 every splitting came out UNRESOLVED. Errors are also written to stderr as
a JSON object.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import platform
import re
import sys
import time
from pathlib import Path
from typing import Any, Mapping

from . import REPORT_SCHEMA, __version__

COMMANDS = ("eig", "eikonal", "verify", "split", "sweep", "gauge-check")
ENV_PREFIX = "AGMONLAB_"
EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_UNRESOLVED = 0, 2, 3, 4

_REQUIRED = {
    "eig": ("model",),
    "eikonal": ("model",),
    "verify": ("model",),
    "split": ("model",),
    "sweep": ("model", "tunnel"),
    "gauge-check": ("model",),
}
_KEY = re.compile(r"^[a-z0-9_]+(\.[a-z0-9_]+)*$")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class ConfigError(ValueError):
    pass


class Unresolved(RuntimeError):
    pass


# -- configuration ---------------------------------------------------------------

def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(t) for t in text.split(",") if t.strip()]
    try:
        return float(text)  # nan, inf
    except ValueError:
        pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{n}: malformed key {key!r}")
        if key in flat:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        flat[key] = parse_value(value)
    return flat


def env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if not _KEY.match(key):
            raise ConfigError(f"environment override {name} does not map to a config key")
        out[key] = parse_value(value)
    return out


def unflatten(flat: Mapping[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key in sorted(flat):
        node = tree
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} nests under a scalar entry")
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"key {key!r} is both a value and a section")
        node[parts[-1]] = flat[key]
    return tree


def _check_finite(value, key: str) -> None:
    if isinstance(value, bool):
        return
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{key} is not finite")
    if isinstance(value, (list, tuple)):
        for v in value:
            _check_finite(v, key)
    if isinstance(value, dict):
        for k, v in value.items():
            _check_finite(v, f"{key}.{k}")


@dataclasses.dataclass
class ExperimentConfig:
    command: str
    flat: dict[str, Any]
    out: Path
    seed: int
    base_dir: Path

    @property
    def tree(self) -> dict[str, Any]:
        return unflatten(self.flat)

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.tree.get(name, {}))

    def get(self, key: str, default=None):
        return self.flat.get(key, default)

    @property
    def settings(self) -> dict[str, Any]:
        """Everything that affects results (the output location does not)."""
        return {k: v for k, v in self.flat.items() if k != "output.dir"}

    def digest(self) -> str:
        blob = json.dumps({"command": self.command, "config": self.settings, "seed": self.seed},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_experiment(command: str, config_path, *, out=None, seed=None,
                    environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    path = Path(config_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    flat = parse_config(text, str(path))
    flat.update(env_overrides(os.environ if environ is None else environ))
    if out is not None:
        flat["output.dir"] = str(out)
    if seed is not None:
        flat["seed"] = int(seed)
    for key, value in flat.items():
        _check_finite(value, key)
    tree = unflatten(flat)
    for sec in _REQUIRED[command]:
        if not isinstance(tree.get(sec), dict):
            raise ConfigError(f"command {command!r} needs a [{sec}] section (keys '{sec}.*')")
    out_dir = flat.get("output.dir")
    if out_dir is None:
        raise ConfigError("no output directory: pass --out or set output.dir")
    s = flat.get("seed", 0)
    if not isinstance(s, int) or isinstance(s, bool) or s < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {s!r}")
    return ExperimentConfig(command, flat, Path(str(out_dir)), s, path.parent.resolve())


def build_model(cfg: ExperimentConfig):
    from .model import ModelConfig

    sec = cfg.section("model")
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = sorted(set(sec) - names)
    if unknown:
        raise ConfigError(f"unknown model keys {unknown}")
    if "h" not in sec:
        raise ConfigError("model.h is required")
    for key in ("potential_params", "vector_params"):
        params = dict(sec.get(key, {}))
        if "path" in params:
            params["path"] = str((cfg.base_dir / params["path"]).resolve())
        sec[key] = params
    for key in ("lower", "upper", "points"):
        if key in sec and not isinstance(sec[key], list):
            sec[key] = [sec[key]]
    for key in ("h", "mu", "hole_radius"):
        if key in sec and (isinstance(sec[key], bool) or not isinstance(sec[key], (int, float))):
            raise ConfigError(f"model.{key} must be a number, got {sec[key]!r}")
    for key in ("lower", "upper", "points"):
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in sec.get(key, [])):
            raise ConfigError(f"model.{key} must be a list of numbers")
    try:
        return ModelConfig(**sec)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- output ----------------------------------------------------------------------

def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        try:
            root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {root}: {exc.strerror}") from exc
        if not os.access(root, os.W_OK):
            raise ConfigError(f"output directory {root} is not writable")

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(dump_json({"schema": REPORT_SCHEMA, **obj}))


def _grid_info(model) -> dict:
    g = model.grid()
    return {"lower": list(g.lower), "upper": list(g.upper), "points": list(g.points),
            "spacing": list(g.spacing), "hole_radius": model.hole_radius}


def _versions() -> dict:
    import gmpy2
    import numpy
    import scipy

    return {"agmonlab": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "gmpy2": gmpy2.version(), "python": platform.python_version()}


# -- commands --------------------------------------------------------------------

def _solve_opts(cfg):
    s = cfg.section("solve")
    return int(s.get("k", 1)), float(s.get("tol", 1e-8)), str(s.get("method", "lobpcg"))


def cmd_eig(cfg, model, out: Outputs) -> int:
    import numpy as np

    from .eigen import lowest_eigenpairs
    from .operator import assemble

    k, tol, method = _solve_opts(cfg)
    maxiter = int(cfg.get("solve.maxiter", 5000))
    op = assemble(model)
    pairs, report = lowest_eigenpairs(op, k, tol, seed=cfg.seed, method=method, maxiter=maxiter)
    out.json("eig.json", {
        "command": "eig",
        "lambda": [p.lam for p in pairs],
        "residuals": [p.residual for p in pairs],
        "solve": report.to_dict(),
    })
    g = op.grid
    centre = g.nearest_node(0.5 * (np.array(g.lower) + np.array(g.upper)))
    coords = g.axes
    for axis in range(g.dim):
        idx = list(centre)
        idx[axis] = slice(None)
        names = [f"x{axis + 1}"]
        cols = [np.asarray(coords[axis])]
        for j, p in enumerate(pairs):
            v = np.asarray(p.u.values)[tuple(idx)]
            names += [f"re_{j}", f"im_{j}"]
            cols += [np.real(v), np.imag(v)]
        _write_columns(out.path(f"slice_axis{axis + 1}.csv"), names, cols)
    return EXIT_OK


def _write_columns(path, names, cols) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([f"{float(v):.16e}" for v in row])


def cmd_eikonal(cfg, model, out: Outputs) -> int:
    import numpy as np

    from .eigen import lowest_eigenpairs
    from .eikonal import agmon_phi0, agmon_phi1, combine_max
    from .operator import assemble

    sec = cfg.section("eikonal")
    _, tol, _ = _solve_opts(cfg)
    op = assemble(model)
    magnetic = op.A is not None and model.mu > 0
    weights = sec.get("weights", ["phi0", "phi1", "phi_a"] if magnetic else ["phi0"])
    weights = [weights] if isinstance(weights, str) else list(weights)
    bad = sorted(set(weights) - {"phi0", "phi1", "phi_a"})
    if bad:
        raise ConfigError(f"unknown eikonal weights {bad}")
    if not magnetic and set(weights) & {"phi1", "phi_a"}:
        raise ConfigError("phi1 and phi_a need mu > 0 and a vector potential")

    cache = {}

    def ground(mu):
        if mu not in cache:
            (p,), _ = lowest_eigenpairs(assemble(model.with_(mu=mu)), 1, tol, seed=cfg.seed)
            cache[mu] = p.lam
        return cache[mu]

    lam0 = sec.get("lambda0", "min")
    if lam0 == "min":
        lam0 = float(np.min(op.V.values[op.grid.interior]))
    elif lam0 == "computed":
        lam0 = ground(0.0)
    elif not isinstance(lam0, (int, float)):
        raise ConfigError("eikonal.lambda0 must be 'min', 'computed' or a number")
    gap = sec.get("gap", 0.0)
    if gap == "computed":
        gap = max(ground(model.mu) - ground(0.0), 0.0)
    elif not isinstance(gap, (int, float)) or gap < 0:
        raise ConfigError("eikonal.gap must be 'computed' or a non-negative number")

    fields = {"phi0": agmon_phi0(op.V, float(lam0))}
    if magnetic:
        fields["phi1"] = agmon_phi1(op.A, model.mu, float(gap))
        fields["phi_a"] = combine_max(fields["phi0"], fields["phi1"])
    summary = {}
    for name in weights:
        w = fields[name]
        w.to_csv(out.path(f"{name}.csv"))
        finite = w.values[np.isfinite(w.values)]
        summary[name] = {"max": float(finite.max()) if finite.size else 0.0,
                         "unreached": int(np.sum(~np.isfinite(w.values))),
                         "clamped": w.clamped,
                         "source_nodes": w.source.count if w.source is not None else None,
                         "source_components": w.source.components if w.source is not None else None}

    probes = sec.get("probes")
    g = op.grid
    if probes is None:
        mid = 0.5 * (np.array(g.lower) + np.array(g.upper))
        probes = []
        for f in (0.25, 0.5, 0.75, 1.0):
            p = mid.copy()
            p[0] = mid[0] + f * 0.5 * (g.upper[0] - g.lower[0])
            probes.append(p.tolist())
    probes = [[float(c) for c in np.atleast_1d(p)] for p in probes]
    if any(len(p) != g.dim for p in probes):
        raise ConfigError(f"eikonal.probes must be points with {g.dim} coordinates")
    rows = []
    for name in weights:
        for p in probes:
            node = g.nearest_node(p)
            rows.append([name] + [float(c) for c in g.node_position(node)] + [float(fields[name].values[node])])
    import csv

    with open(out.path("distances.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["weight"] + [f"x{k + 1}" for k in range(g.dim)] + ["phi"])
        for r in rows:
            w.writerow([r[0]] + [f"{v:.16e}" for v in r[1:]])
    out.json("eikonal.json", {"command": "eikonal", "lambda0": float(lam0), "gap": float(gap),
                              "weights": summary})
    return EXIT_OK


def cmd_verify(cfg, model, out: Outputs) -> int:
    import numpy as np

    from . import verify as vf

    sec = cfg.section("verify")
    _, tol, _ = _solve_opts(cfg)
    delta = float(sec.get("delta", 0.1))
    if not 0 <= delta < 1:
        raise ConfigError("verify.delta must lie in [0, 1)")
    radius = float(sec.get("omega_radius", 0.5))
    identities = sec.get("identities", list(vf.IDENTITIES))
    identities = [identities] if isinstance(identities, str) else list(identities)
    gs = vf.ground_states(model, tol=max(tol, 1e-10), seed=cfg.seed, refine=1 - delta)
    reports = vf.identity_suite(gs, delta=delta, omega_radius=radius,
                                phase_alpha=float(sec.get("phase_alpha", 0.0)),
                                cutoff_width=float(sec.get("cutoff_width", 0.5)),
                                identities=identities)
    out.json("identities.json", {
        "command": "verify", "lambda_a": gs.pair.lam, "lambda_0": gs.pair0.lam,
        "delta": delta, "omega_radius": radius,
        "identities": [r.to_dict() for r in reports],
    })
    xs = gs.op.grid.coords()
    r = np.sqrt(sum(x**2 for x in xs))
    outer = float(sec.get("decay_outer", np.inf))
    rep = vf.decay_report(gs.pair.u, gs.phi_a, model.h, well_mask=r < radius, region=r <= outer)
    region = r >= radius
    out.json("decay.json", {
        "command": "verify", "weight": "phi_a", "annulus": [radius, outer],
        "decay": rep.to_dict(),
        "weighted_norm": vf.weighted_norm(gs.pair.u, (1 - delta) * gs.phi_a.values, model.h, region),
    })
    return EXIT_OK


def _double_well(model, tol):
    from .tunneling import make_double_well

    return make_double_well(model, tol=tol)


def _reference(dw):
    from .tunneling import reference_distance

    try:
        return reference_distance(dw)
    except ValueError:
        return None


def cmd_split(cfg, model, out: Outputs) -> int:
    from .tunneling import UNRESOLVED, splitting_direct

    sec = cfg.section("tunnel")
    _, tol, _ = _solve_opts(cfg)
    dw = _double_well(model, tol)
    rep = splitting_direct(dw, tol=tol, reference=_reference(dw), seed=cfg.seed,
                           method=str(sec.get("method", "plane")))
    body = {"command": "split", "splitting": rep.to_dict(),
            "parity_labels": {"lambda_minus": "even", "lambda_plus": "odd"} if rep.parity else None}
    out.json("split.json", body)
    if rep.status == UNRESOLVED:
        raise Unresolved(f"splitting below the resolution floor {rep.floor:.3e}")
    return EXIT_OK


def cmd_sweep(cfg, model, out: Outputs) -> int:
    from .tunneling import RESOLVED, rate_sweep

    sec = cfg.section("tunnel")
    for key in ("h_list", "mu_list"):
        if key not in sec:
            raise ConfigError(f"tunnel.{key} is required for sweeps")
    _, tol, _ = _solve_opts(cfg)
    h_list = sec["h_list"] if isinstance(sec["h_list"], list) else [sec["h_list"]]
    mu_list = sec["mu_list"] if isinstance(sec["mu_list"], list) else [sec["mu_list"]]
    dw = _double_well(model, tol)
    res = rate_sweep(dw, h_list, mu_list, tol, seed=cfg.seed)
    res.write_csv(out.path("sweep.csv"))
    out.json("sweep.json", {"command": "sweep", **res.to_dict()})
    if not any(r.status == RESOLVED for r in res.reports):
        raise Unresolved("every sweep cell is UNRESOLVED")
    return EXIT_OK


def cmd_gauge_check(cfg, model, out: Outputs) -> int:
    from . import verify as vf

    sec = cfg.section("gauge")
    _, tol, _ = _solve_opts(cfg)
    tol = max(tol, 1e-10)
    k = int(sec.get("k", 3))
    body: dict[str, Any] = {"command": "gauge-check", "tolerance": tol}
    body["gauge_shift"] = vf.gauge_shift_check(
        model, str(sec.get("chi", "bilinear")), sec.get("chi_params", {}), k=k, tol=tol,
        rule=str(sec.get("rule", "exact")), seed=cfg.seed).to_dict()
    if model.vector_potential == "aharonov-bohm":
        if model.mu <= 0:
            raise ConfigError("flux checks need mu > 0")
        unit = 2 * math.pi * model.h / model.mu
        body["flux"] = [vf.flux_shift_check(model, f * unit, k=k, tol=tol, seed=cfg.seed).to_dict()
                        for f in (1.0, 0.5)]
    mu_list = sec.get("mu_list", [0.0, 0.5, 1.0, 2.0])
    mu_list = mu_list if isinstance(mu_list, list) else [mu_list]
    if model.vector_potential not in ("zero", "pure-gradient"):
        body["kato"] = vf.kato_sweep(model, [float(m) for m in mu_list], tol=tol, seed=cfg.seed)
    out.json("gauge.json", body)
    return EXIT_OK


_HANDLERS = {
    "eig": cmd_eig,
    "eikonal": cmd_eikonal,
    "verify": cmd_verify,
    "split": cmd_split,
    "sweep": cmd_sweep,
    "gauge-check": cmd_gauge_check,
}


# -- driver ----------------------------------------------------------------------

def _error(code: int, kind: str, message: str, stream) -> int:
    stream.write(json.dumps({"error": {"code": code, "kind": kind, "message": message}}, sort_keys=True) + "\n")
    return code


def run(command: str, config_path, *, out=None, seed=None, threads=None, stderr=None) -> int:
    """Run one command; returns the exit status. Artifacts go to the output directory."""
    stderr = stderr or sys.stderr
    started = time.time()
    try:
        cfg = load_experiment(command, config_path, out=out, seed=seed)
        model = build_model(cfg)
        outputs = Outputs(cfg.out)
    except (ConfigError, ValueError) as exc:
        return _error(EXIT_INVALID, "validation", str(exc), stderr)

    from .eigen import EigenSolveError

    status, failure = EXIT_OK, None
    try:
        status = _HANDLERS[command](cfg, model, outputs)
    except Unresolved as exc:
        status, failure = EXIT_UNRESOLVED, ("unresolved", str(exc))
    except EigenSolveError as exc:
        status, failure = EXIT_NO_CONVERGENCE, ("no-convergence", str(exc))
    except (ConfigError, ValueError) as exc:
        status, failure = EXIT_INVALID, ("validation", str(exc))

    manifest = {"command": command, "config_hash": cfg.digest(), "config": cfg.settings, "seed": cfg.seed,
                "versions": _versions(), "grid": _grid_info(model), "exit_status": status,
                "outputs": sorted(outputs.files)}
    (cfg.out / "manifest.json").write_text(dump_json({"schema": REPORT_SCHEMA, **manifest}))
    finished = time.time()
    meta = {"started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(finished)),
            "elapsed_seconds": finished - started, "threads": threads}
    (cfg.out / "metadata.json").write_text(dump_json(meta))
    if failure is not None:
        return _error(status, failure[0], failure[1], stderr)
    return status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agmonlab", description="Agmon weights, identity checks and tunneling splittings.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, metavar="PATH", help="flat key = value config file")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, metavar="N", help="random seed (overrides seed)")
    p.add_argument("--threads", type=int, metavar="N", help="BLAS/OpenMP threads")
    p.add_argument("--version", action="version", version=f"agmonlab {__version__}")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _error(EXIT_INVALID, "usage", str(exc), sys.stderr)
    if args.threads is not None:
        if args.threads < 1:
            return _error(EXIT_INVALID, "usage", "--threads must be at least 1", sys.stderr)
        # only effective when numpy has not been loaded yet
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    return run(args.command, args.config, out=args.out, seed=args.seed, threads=args.threads)
