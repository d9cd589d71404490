"""JSON schemas for matrices, density contexts, superoperators and reports.

Matrix object: {"n": int, "re": [[float]], "im": [[float]]} (row-major).
Density context adds {"tol": float}.  Superoperator:
{"n": int, "level": "algebra"|"l2", "re": [[float]], "im": [[float]]} with
the n^2 x n^2 matrix over the column-stacking vectorization.  Numbers are
emitted through Python's repr, which round-trips doubles exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DimensionMismatch, NotHermitian, SchemaError
from .matrix_core import DensityContext
from .superop import ALGEBRA, L2, Superoperator


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaError(f"{where}: missing key {key!r}")
    return d[key]


def _array(d: dict, n_rows: int, where: str) -> np.ndarray:
    re = _require(d, "re", where)
    im = _require(d, "im", where)
    try:
        arr = np.asarray(re, dtype=float) + 1j * np.asarray(im, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: entries are not numeric ({exc})") from exc
    if arr.shape != (n_rows, n_rows):
        raise SchemaError(f"{where}: expected shape {(n_rows, n_rows)}, got {arr.shape}")
    return arr


def matrix_to_json(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=complex)
    return {"n": a.shape[0], "re": a.real.tolist(), "im": a.imag.tolist()}


def matrix_from_json(d: dict, where: str = "matrix") -> np.ndarray:
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected an object")
    n = _require(d, "n", where)
    if not isinstance(n, int) or n < 1:
        raise SchemaError(f"{where}: 'n' must be a positive integer")
    return _array(d, n, where)


def density_to_json(ctx: DensityContext) -> dict:
    d = matrix_to_json(ctx.rho)
    d["tol"] = ctx.tol
    return d


def density_from_json(d: dict, where: str = "density") -> DensityContext:
    rho = matrix_from_json(d, where)
    tol = d.get("tol", 1e-9)
    if not isinstance(tol, (int, float)) or tol <= 0:
        raise SchemaError(f"{where}: 'tol' must be a positive number")
    try:
        return DensityContext.from_rho(rho, tol=float(tol))
    except (ValueError, NotHermitian, DimensionMismatch) as exc:
        raise SchemaError(f"{where}: not a valid density matrix ({exc})") from exc


def superop_to_json(s: Superoperator) -> dict:
    return {
        "n": s.dim,
        "level": s.level,
        "re": s.mat.real.tolist(),
        "im": s.mat.imag.tolist(),
    }


def superop_from_json(d: dict, where: str = "superoperator") -> Superoperator:
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected an object")
    n = _require(d, "n", where)
    if not isinstance(n, int) or n < 1:
        raise SchemaError(f"{where}: 'n' must be a positive integer")
    level = d.get("level", ALGEBRA)
    if level not in (ALGEBRA, L2):
        raise SchemaError(f"{where}: 'level' must be 'algebra' or 'l2'")
    re = _require(d, "re", where)
    im = _require(d, "im", where)
    try:
        mat = np.asarray(re, dtype=float) + 1j * np.asarray(im, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: entries are not numeric ({exc})") from exc
    if mat.shape != (n * n, n * n):
        raise SchemaError(f"{where}: expected shape {(n*n, n*n)}, got {mat.shape}")
    return Superoperator(mat, n, level)


def family_to_json(family) -> dict:
    return {
        "V": [matrix_to_json(v) for v in family.ops],
        "pairing": list(family.pairing),
    }


def calculus_to_json(calc) -> dict:
    """Dump of a first-order calculus: delta images, both actions and the
    involution, keyed by matrix-unit labels 'ab'."""
    n = calc.dim

    def cvec(v):
        return {"re": v.real.tolist(), "im": v.imag.tolist()}

    return {
        "dimH": calc.dim_h,
        "delta": {f"{a}{b}": cvec(calc.delta[a, b]) for a in range(n) for b in range(n)},
        "piL": {f"{a}{b}": cvec(calc.pi_l[a, b]) for a in range(n) for b in range(n)},
        "piR": {f"{a}{b}": cvec(calc.pi_r[a, b]) for a in range(n) for b in range(n)},
        "J": cvec(calc.jmat),
    }


def load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise SchemaError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc


def dump_json(obj, path: str | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
