"""Deterministic JSON and CSV output.

Floats are always written with 17 significant digits so that identical runs
produce byte-identical files; ``nan`` and infinities become ``null``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np


def _scalar(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_scalar(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    return _scalar(obj)


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def module_versions() -> dict:
    import pyamg
    import scipy

    from . import __version__

    return {
        "serrinlab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyamg": pyamg.__version__,
        "python": platform.python_version(),
    }


def meta(config: dict) -> dict:
    return {"config_hash": config_hash(config), "versions": module_versions(), "config": config}


def write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    cols = [np.ravel(np.asarray(c, dtype=float)) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([format(v, ".17g") for v in row])


def torsion_csv(path: Path, sol) -> None:
    g = sol.grid
    rho, t = np.meshgrid(g.rho, g.t, indexing="ij")
    write_csv(path, ["rho", "t", "r", "u", "u_r", "u_t"], [rho, t, g.r, sol.u, sol.grad_u[0], sol.grad_u[1]])


def field_csv(path: Path, grid, w: np.ndarray) -> None:
    rho, t = np.meshgrid(grid.rho, grid.t, indexing="ij")
    write_csv(path, ["rho", "t", "r", "w"], [rho, t, grid.r, w])


def pixel_csv(path: Path, px, v: np.ndarray) -> None:
    rc = 0.5 * (px.r_edges[1:] + px.r_edges[:-1])
    tc = 0.5 * (px.t_edges[1:] + px.t_edges[:-1])
    R, T = np.meshgrid(rc, tc, indexing="ij")
    write_csv(path, ["r", "t", "v"], [R, T, v])
