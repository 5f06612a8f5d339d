"""Analytic potentials, vector potentials and gauge functions.

Every entry is a plain function of the coordinates, so sampling is exact at
any resolution. Custom tables come from CSV files in row-major node order.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .grid import Grid, ScalarField, VectorField

SCALAR_IDS = ("harmonic", "quartic-double-well", "gaussian-wells", "zero", "custom-table")
VECTOR_IDS = ("symmetric-gauge", "landau-gauge", "pure-gradient", "aharonov-bohm", "zero", "custom-table")
GAUGE_IDS = ("constant", "linear", "bilinear", "sine")


# -- scalar potentials --------------------------------------------------------

def _harmonic(xs, omega=1.0):
    return omega**2 * sum(x**2 for x in xs)


def _quartic(xs, a=1.0, c=1.0):
    # well axis is the last coordinate
    v = (xs[-1] ** 2 - a**2) ** 2
    for x in xs[:-1]:
        v = v + c * x**2
    return v


def _gaussian_wells(xs, a=1.0, width=0.5, depth=1.0):
    r_up = sum(x**2 for x in xs[:-1]) + (xs[-1] - a) ** 2
    r_dn = sum(x**2 for x in xs[:-1]) + (xs[-1] + a) ** 2
    return depth * (1 - np.exp(-r_up / width**2)) * (1 - np.exp(-r_dn / width**2))


def _zero(xs):
    return np.zeros_like(xs[0], dtype=float)


_SCALARS: dict[str, Callable] = {
    "harmonic": _harmonic,
    "quartic-double-well": _quartic,
    "gaussian-wells": _gaussian_wells,
    "zero": _zero,
}


def scalar_function(catalog_id: str, params: Mapping | None = None) -> Callable:
    if catalog_id not in _SCALARS:
        raise ValueError(f"unknown potential id {catalog_id!r}; expected one of {SCALAR_IDS}")
    params = dict(params or {})
    f = _SCALARS[catalog_id]
    return lambda *xs: f(xs, **params)


def sample_scalar(catalog_id: str, params: Mapping | None, grid: Grid) -> ScalarField:
    params = dict(params or {})
    if catalog_id == "custom-table":
        if "path" in params:
            values = load_scalar_csv(params["path"], grid)
        else:
            values = np.asarray(params["values"], dtype=float)
            if values.size != grid.size:
                raise ValueError(f"custom table has {values.size} values for {grid.size} nodes")
            values = values.reshape(grid.shape)
        return ScalarField(grid, values, nonnegative=bool(np.all(values >= 0)))
    f = scalar_function(catalog_id, params)
    values = f(*grid.coords())
    return ScalarField(grid, values, nonnegative=True)


# -- gauge functions chi ------------------------------------------------------

def gauge_function(catalog_id: str, params: Mapping | None = None):
    """Return ``(chi, grad_chi)`` callables for a catalog gauge function."""
    p = dict(params or {})
    if catalog_id == "constant":
        c = float(p.get("value", 1.0))
        return (lambda *xs: np.full_like(xs[0], c, dtype=float),
                lambda *xs: tuple(np.zeros_like(x, dtype=float) for x in xs))
    if catalog_id == "linear":
        k = np.atleast_1d(np.asarray(p.get("k", 1.0), dtype=float))
        return (lambda *xs: sum(k[min(i, len(k) - 1)] * x for i, x in enumerate(xs)),
                lambda *xs: tuple(np.full_like(x, k[min(i, len(k) - 1)], dtype=float) for i, x in enumerate(xs)))
    if catalog_id == "bilinear":
        alpha = float(p.get("alpha", 1.0))

        def chi(*xs):
            return alpha * np.prod(xs, axis=0) if len(xs) > 1 else 0.5 * alpha * xs[0] ** 2

        def grad(*xs):
            if len(xs) == 1:
                return (alpha * xs[0],)
            return (alpha * xs[1], alpha * xs[0])

        return chi, grad
    if catalog_id == "sine":
        alpha = float(p.get("alpha", 1.0))
        k = float(p.get("k", 1.0))

        def chi(*xs):
            return alpha * np.prod([np.sin(k * x) for x in xs], axis=0)

        def grad(*xs):
            s = [np.sin(k * x) for x in xs]
            c = [np.cos(k * x) for x in xs]
            out = []
            for i in range(len(xs)):
                term = alpha * k * c[i]
                for j in range(len(xs)):
                    if j != i:
                        term = term * s[j]
                out.append(term)
            return tuple(out)

        return chi, grad
    raise ValueError(f"unknown gauge function id {catalog_id!r}; expected one of {GAUGE_IDS}")


def sample_gauge(catalog_id: str, params: Mapping | None, grid: Grid) -> ScalarField:
    chi, _ = gauge_function(catalog_id, params)
    return ScalarField(grid, chi(*grid.coords()))


# -- vector potentials --------------------------------------------------------

def _vector_callables(catalog_id: str, p: dict, dim: int):
    """Return ``(func, line_integral)``; ``line_integral`` may be None."""
    if catalog_id == "zero":
        return (lambda *xs: tuple(np.zeros_like(x, dtype=float) for x in xs)), None
    if catalog_id in ("symmetric-gauge", "landau-gauge"):
        if dim != 2:
            raise ValueError(f"{catalog_id} needs a 2D grid")
        b = float(p.get("b", 1.0))
        if catalog_id == "symmetric-gauge":
            func = lambda x1, x2: (-0.5 * b * x2, 0.5 * b * x1)  # noqa: E731
        else:
            func = lambda x1, x2: (-b * x2, np.zeros_like(x1, dtype=float))  # noqa: E731
        # linear fields: the midpoint rule is exact, no separate integral needed
        return func, None
    if catalog_id == "pure-gradient":
        chi, grad = gauge_function(p.get("chi", "linear"), p.get("chi_params", p))

        def integral(start, end):
            return chi(*end) - chi(*start)

        return grad, integral
    if catalog_id == "aharonov-bohm":
        if dim != 2:
            raise ValueError("aharonov-bohm needs a 2D grid")
        flux = float(p.get("flux", 2 * np.pi))
        s = flux / (2 * np.pi)

        def func(x1, x2):
            r2 = x1**2 + x2**2
            with np.errstate(divide="ignore", invalid="ignore"):
                return (-s * x2 / r2, s * x1 / r2)

        def integral(start, end):
            # flux/2pi times the swept polar angle, exact for segments avoiding 0
            cross = start[0] * end[1] - start[1] * end[0]
            dot = start[0] * end[0] + start[1] * end[1]
            return s * np.arctan2(cross, dot)

        return func, integral
    raise ValueError(f"unknown vector potential id {catalog_id!r}; expected one of {VECTOR_IDS}")


def sample_vector(catalog_id: str, params: Mapping | None, grid: Grid) -> VectorField:
    p = dict(params or {})
    if catalog_id == "custom-table":
        if "path" in p:
            values = load_vector_csv(p["path"], grid)
        else:
            values = np.asarray(p["values"], dtype=float)
            if values.size != grid.dim * grid.size:
                raise ValueError("custom vector table does not match the grid")
            values = values.reshape((grid.dim,) + grid.shape)
        return VectorField(grid, values)
    func, integral = _vector_callables(catalog_id, p, grid.dim)
    xs = grid.coords()
    if catalog_id == "aharonov-bohm":
        if grid.excluded is None:
            raise ValueError("aharonov-bohm requires a grid with an excluded disk around the origin")
        origin = grid.nearest_node(np.zeros(grid.dim))
        if not grid.excluded[origin]:
            raise ValueError("aharonov-bohm sampled inside the flux tube: the origin must be excluded")
        values = np.array(func(*xs))
        values[:, grid.excluded] = 0.0
    else:
        values = np.array(func(*xs), dtype=float)
    return VectorField(grid, values, func=func, line_integral=integral)


def _shifted_field(f, grad):
    return lambda *xs: tuple(a + b for a, b in zip(f(*xs), grad(*xs)))


def _shifted_integral(integral, chi):
    return lambda start, end: integral(start, end) + chi(*end) - chi(*start)


def add_gradient(A: VectorField, chi_id: str, chi_params: Mapping | None) -> VectorField:
    """``A + grad chi`` keeping analytic evaluators when ``A`` has them."""
    chi, grad = gauge_function(chi_id, chi_params)
    g = A.grid
    values = A.values + np.array(grad(*g.coords()))
    func = None if A.func is None else _shifted_field(A.func, grad)
    integral = None if A.line_integral is None else _shifted_integral(A.line_integral, chi)
    return VectorField(g, values, func=func, line_integral=integral)


# -- CSV tables ---------------------------------------------------------------

def _read_rows(path, grid: Grid, ncols: int) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if len(header) != grid.dim + ncols:
        raise ValueError(f"expected {grid.dim + ncols} columns, header has {len(header)}")
    data = np.asarray(rows, dtype=float)
    if data.shape[0] != grid.size:
        raise ValueError(f"table has {data.shape[0]} rows for {grid.size} grid nodes")
    coords = np.stack([c.ravel() for c in grid.coords()], axis=1)
    if not np.allclose(data[:, : grid.dim], coords, atol=1e-9 * max(1.0, float(np.max(np.abs(coords))))):
        raise ValueError("table coordinates are not in row-major grid order")
    return data[:, grid.dim:]


def load_scalar_csv(path, grid: Grid) -> np.ndarray:
    return _read_rows(path, grid, 1)[:, 0].reshape(grid.shape)


def load_vector_csv(path, grid: Grid) -> np.ndarray:
    vals = _read_rows(path, grid, grid.dim)
    return vals.T.reshape((grid.dim,) + grid.shape)


def write_field_csv(path, grid: Grid, columns: Mapping[str, np.ndarray]) -> None:
    """Write node coordinates plus named columns, 17 significant digits."""
    names = ["x", "y"][: grid.dim]
    coords = [c.ravel() for c in grid.coords()]
    cols = [np.asarray(v).ravel() for v in columns.values()]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + list(columns))
        for row in zip(*coords, *cols):
            w.writerow([f"{float(v):.16e}" for v in row])
