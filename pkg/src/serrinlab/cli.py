"""Command-line pipeline: find a Serrin branch, certify it, solve the CMC graphs.

    serrinlab find-serrin --out run/
    serrinlab certify run/branch.json --out run/
    serrinlab solve-cmc run/branch.json --out run/
    serrinlab report --out run/

Exit codes: 0 success, 2 configuration or input error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import export
from .cheeger import Slab, one_laplacian_check, subset_oracle, tv_relaxed_minimize, verify_calibration
from .cmc import solve_cmc_limit
from .errors import ConfigError, SerrinLabError
from .geometry import generate_grid
from .serrin_finder import BranchPoint, continue_branch, cylinder_point, detect_bifurcation_period, refine_point
from .torsion import solve_torsion

log = logging.getLogger("serrinlab")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


@dataclass(frozen=True)
class RunConfig:
    n: int = 1
    base_radius: float = 1.0
    s_max: float = 0.1
    ds: float = 0.02
    modes: int = 8
    branch_grid: tuple[int, int] = (64, 64)
    calib_grid: tuple[int, int] = (256, 256)
    tv_grid: tuple[int, int] = (128, 128)
    cmc_grid: tuple[int, int] = (128, 32)
    tol_residual: float = 1e-8
    tol_identity: float = 1e-6
    tol_calib: float = 5e-4
    tol_sup: float = 1e-3
    tol_tv: float = 2e-3
    slab_periods: int = 1
    eps_list: tuple[float, ...] = (0.025, 0.0125, 0.00625, 0.003125)
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _power_of_two(k: int) -> bool:
    return k > 0 and k & (k - 1) == 0


def validate(c: RunConfig) -> None:
    for name in ("branch_grid", "calib_grid", "tv_grid", "cmc_grid"):
        g = getattr(c, name)
        if len(g) != 2 or not all(isinstance(k, int) and _power_of_two(k) and 16 <= k <= 1024 for k in g):
            raise ConfigError(f"{name} must be two powers of two in [16, 1024], got {g}")
    for name in ("tol_residual", "tol_identity", "tol_calib", "tol_sup", "tol_tv", "base_radius", "ds"):
        v = getattr(c, name)
        if not (isinstance(v, (int, float)) and v > 0 and np.isfinite(v)):
            raise ConfigError(f"{name} must be positive, got {v}")
    if not (isinstance(c.n, int) and c.n >= 1):
        raise ConfigError(f"n must be a positive integer, got {c.n}")
    if c.s_max < 0 or c.s_max > 0.3 * c.base_radius:
        raise ConfigError(f"s_max must lie in [0, 0.3 * base_radius], got {c.s_max}")
    if c.modes < 2:
        raise ConfigError(f"modes must be >= 2, got {c.modes}")
    if c.slab_periods < 1:
        raise ConfigError(f"slab_periods must be >= 1, got {c.slab_periods}")
    e = c.eps_list
    if len(e) < 2 or any(x <= 0 for x in e) or any(b >= a for a, b in zip(e, e[1:])):
        raise ConfigError(f"eps_list must be positive and strictly decreasing, got {list(e)}")
    if c.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {c.workers}")


def parse_grid(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"grid must look like NRHOxNT, got {text!r}") from None


def parse_eps(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"eps list must be comma separated numbers, got {text!r}") from None


def _load_json(path: Path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: parse error: {exc.msg}") from None


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        data = _load_json(Path(path))
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name: f for f in fields(RunConfig)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    for k in ("branch_grid", "calib_grid", "tv_grid", "cmc_grid", "eps_list"):
        if k in data:
            data[k] = tuple(data[k])
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def read_branch(path: Path) -> list[BranchPoint]:
    data = _load_json(path)
    records = data["points"] if isinstance(data, dict) and "points" in data else data
    if not isinstance(records, list):
        raise ConfigError(f"{path}: expected a list of branch points")
    try:
        return [BranchPoint.from_dict(r) for r in records]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed branch record: {exc}") from None


def _table(rows: list[dict], cols: list[str]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6e}" if v == v else "nan"
        return str(v)

    cells = [[fmt(r.get(c, "")) for c in cols] for r in rows]
    width = [max(len(c), *(len(x[i]) for x in cells)) if cells else len(c) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, width))]
    lines += ["  ".join(x.rjust(w) for x, w in zip(row, width)) for row in cells]
    return "\n".join(lines)


# --- stages -------------------------------------------------------------------


def cmd_find_serrin(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lam = detect_bifurcation_period(cfg.n, cfg.base_radius, cfg.branch_grid)
    start = cylinder_point(cfg.n, cfg.base_radius, lam, cfg.branch_grid)
    try:
        points = continue_branch(start, cfg.s_max, cfg.ds, K=cfg.modes, tol=cfg.tol_residual, workers=cfg.workers)
    except SerrinLabError as exc:
        print(f"find-serrin: continuation failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    doc = export.meta(cfg.to_dict())
    doc["bifurcation_lambda"] = lam
    doc["points"] = [p.to_dict() for p in points]
    export.write_json(out / "branch.json", doc)
    print(_table([{"s": p.s, "lambda": p.lam, "beta": p.beta, "residual": p.residual_norm} for p in points],
                 ["s", "lambda", "beta", "residual"]))
    return EXIT_OK


def certify_point(p: BranchPoint, cfg: RunConfig) -> dict:
    q = refine_point(p, cfg.calib_grid, K=cfg.modes, tol=cfg.tol_residual) if p.grid != cfg.calib_grid else p
    sol = solve_torsion(generate_grid(q.domain, *cfg.calib_grid))
    slab = Slab(0.0, cfg.slab_periods * q.lam)
    rep = verify_calibration(sol, slab)
    tv = tv_relaxed_minimize(q.domain, slab, sol.beta_mean, *cfg.tv_grid)
    rep.tv_min_value = tv.value
    rep.subset_oracle_min = subset_oracle(q.domain, slab)["min"]
    verdict = one_laplacian_check(rep, cfg.tol_sup, cfg.tol_calib, cfg.tol_calib)
    return {
        "s": p.s,
        "lambda": q.lam,
        "report": rep.to_dict(),
        "identity_ok": rep.identity_gap <= cfg.tol_identity,
        "one_laplacian": verdict,
        "tv_ok": abs(tv.value) <= cfg.tol_tv,
        "subset_ok": rep.subset_oracle_min >= rep.quotient - 1e-3,
        "_tv": (tv.pixels, tv.minimizer),
    }


def _run_point(func, p, cfg):
    try:
        return func(p, cfg)
    except SerrinLabError as exc:
        return {"s": p.s, "error": f"{type(exc).__name__}: {exc}"}


def _map_points(func, points, cfg):
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            return list(ex.map(_run_point, [func] * len(points), points, [cfg] * len(points)))
    return [_run_point(func, p, cfg) for p in points]


def cmd_certify(branch: Path, cfg: RunConfig) -> int:
    points = read_branch(branch)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _map_points(certify_point, points, cfg)
    rows = []
    for i, r in enumerate(results):
        if "_tv" in r:
            export.pixel_csv(out / f"tv_minimizer_{i:02d}.csv", *r.pop("_tv"))
        rep = r.get("report", {})
        rows.append({"s": r["s"], "identity_gap": rep.get("identity_gap", float("nan")),
                     "tv_min": rep.get("tv_min_value", float("nan")),
                     "verdict": r.get("one_laplacian", r.get("error"))})
    doc = export.meta(cfg.to_dict())
    doc["branch_sha256"] = hashlib.sha256(branch.read_bytes()).hexdigest()
    doc["points"] = results
    export.write_json(out / "certify.json", doc)
    print(_table(rows, ["s", "identity_gap", "tv_min", "verdict"]))
    return EXIT_SOLVER if any("error" in r for r in results) else EXIT_OK


def cmc_point(p: BranchPoint, cfg: RunConfig) -> dict:
    sol = solve_torsion(generate_grid(p.domain, *cfg.cmc_grid))
    c = solve_cmc_limit(sol, cfg.eps_list)
    return {
        "s": p.s,
        "beta": c.beta,
        "curvature_residual": c.curvature_residual,
        "periodicity_residual": c.periodicity_residual,
        "bounded": c.bounded,
        "cauchy_differences": c.cauchy_differences,
        "eps": [
            {
                "eps": f.eps,
                "newton_iters": f.newton_iters,
                "residual": f.residual,
                "contact_min": float(np.min(f.contact)),
                "contact_max": float(np.max(f.contact)),
            }
            for f in c.w_fields
        ],
        "_fields": [(f.eps, f.grid, f.w) for f in c.w_fields] + [("limit", c.compact_grid, c.w_limit)],
    }


def cmd_solve_cmc(branch: Path, cfg: RunConfig) -> int:
    points = read_branch(branch)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _map_points(cmc_point, points, cfg)
    rows = []
    for i, r in enumerate(results):
        for tag, grid, w in r.pop("_fields", []):
            name = "limit" if tag == "limit" else f"eps{tag:.6g}"
            export.field_csv(out / f"cmc_{i:02d}_{name}.csv", grid, w)
        rows.append({
            "s": r["s"],
            "curvature": r.get("curvature_residual", float("nan")),
            "contact_min": min((e["contact_min"] for e in r.get("eps", [])), default=float("nan")),
            "periodicity": r.get("periodicity_residual", float("nan")),
            "status": r.get("error", "ok"),
        })
    doc = export.meta(cfg.to_dict())
    doc["branch_sha256"] = hashlib.sha256(branch.read_bytes()).hexdigest()
    doc["points"] = results
    export.write_json(out / "cmc.json", doc)
    print(_table(rows, ["s", "curvature", "contact_min", "periodicity", "status"]))
    return EXIT_SOLVER if any("error" in r for r in results) else EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    found = False
    for name in ("branch.json", "certify.json", "cmc.json"):
        path = out / name
        if not path.exists():
            continue
        found = True
        doc = _load_json(path)
        print(f"== {name} (config {doc.get('config_hash', '?')[:12]})")
        pts = doc.get("points", [])
        if name == "branch.json":
            print(_table([{k: float(p[k]) for k in ("s", "lambda", "beta", "residual_norm")} for p in pts],
                         ["s", "lambda", "beta", "residual_norm"]))
        elif name == "certify.json":
            print(_table([{"s": float(p["s"]), "identity_gap": p.get("report", {}).get("identity_gap", float("nan")),
                           "one_laplacian": p.get("one_laplacian", p.get("error"))} for p in pts],
                         ["s", "identity_gap", "one_laplacian"]))
        else:
            print(_table([{"s": float(p["s"]), "curvature": p.get("curvature_residual", float("nan")),
                           "periodicity": p.get("periodicity_residual", float("nan")),
                           "status": p.get("error", "ok")} for p in pts],
                         ["s", "curvature", "periodicity", "status"]))
    if not found:
        raise ConfigError(f"no results in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel branch points")
    common.add_argument("--tol-identity", type=float)
    common.add_argument("--tol-calib", type=float)
    common.add_argument("--grid", help="NRHOxNT for the stage's main grid")
    common.add_argument("--eps-list", help="comma separated, strictly decreasing")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="serrinlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("find-serrin", parents=[common], help="bifurcation period and branch continuation")
    for name, text in (("certify", "Cheeger identity and calibration per point"), ("solve-cmc", "CMC graphs per point")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("branch", help="branch JSON written by find-serrin")
    sub.add_parser("report", parents=[common], help="summarize the results in --out")
    return ap


_GRID_FIELD = {"find-serrin": "branch_grid", "certify": "calib_grid", "solve-cmc": "cmc_grid", "report": None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        overrides = {
            "out": args.out,
            "workers": args.workers,
            "tol_identity": args.tol_identity,
            "tol_calib": args.tol_calib,
            "eps_list": parse_eps(args.eps_list) if args.eps_list else None,
        }
        if args.grid and _GRID_FIELD[args.command]:
            overrides[_GRID_FIELD[args.command]] = parse_grid(args.grid)
        cfg = load_config(args.config, overrides)
        if args.command == "find-serrin":
            return cmd_find_serrin(cfg)
        if args.command == "certify":
            return cmd_certify(Path(args.branch), cfg)
        if args.command == "solve-cmc":
            return cmd_solve_cmc(Path(args.branch), cfg)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"serrinlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SerrinLabError as exc:
        print(f"serrinlab {args.command}: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
