"""JSON run configuration: parsing, validation, defaulting and echo."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .lattice import Grid3D
from .model import ModelParams, check_exponent
from .solvers import auto_extent

__all__ = ["SolverSettings", "RunConfig", "parse_config", "config_from_dict", "TOP_KEYS",
           "SOLVER_KEYS", "DEFAULT_GRID_POINTS"]

DEFAULT_GRID_POINTS = 64

TOP_KEYS = {
    "p", "alpha", "lambda", "centers", "softening", "box_halfwidth", "grid_points",
    "solver", "seed",
    # task inputs for the non-solve subcommands
    "lambdas", "alphas", "lambda2", "check",
}
REQUIRED = ("p", "alpha", "lambda")
SOLVER_KEYS = {"method", "tol", "max_iters", "damping", "mixing", "seeds", "stencil_order",
               "eigenpairs", "eig_tol", "threads"}
CHECK_KEYS = {"samples", "c_lt", "epsilons", "j1inf"}


@dataclass(frozen=True)
class SolverSettings:
    method: str = "direct"
    tol: float = 1e-6
    max_iters: int = 3000
    damping: float = 0.5
    mixing: str = "anderson"
    seeds: tuple = (0, 1, 2)
    stencil_order: int = 4
    eigenpairs: int | None = None
    eig_tol: float | None = None
    threads: int | None = None


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    solver: SolverSettings
    seed: int = 0
    lambdas: tuple = ()
    alphas: tuple = ()
    lambda2: float | None = None
    check: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Fully resolved configuration; parsing it again gives the same run."""
        p = self.params
        out = {
            "p": p.p,
            "alpha": p.alpha,
            "lambda": p.lam,
            "centers": [list(c) for c in p.centers],
            "softening": p.s,
            "box_halfwidth": p.grid.extent,
            "grid_points": p.grid.n,
            "solver": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in asdict(self.solver).items() if v is not None},
            "seed": self.seed,
        }
        if self.lambdas:
            out["lambdas"] = list(self.lambdas)
        if self.alphas:
            out["alphas"] = list(self.alphas)
        if self.lambda2 is not None:
            out["lambda2"] = self.lambda2
        if self.check:
            out["check"] = dict(self.check)
        return out


def _number(d: dict, key: str, where: str, integer: bool = False):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}{key}: expected a number, got {type(v).__name__}")
    if integer:
        if float(v) != int(v):
            raise ParseError(f"{where}{key}: expected an integer, got {v}")
        return int(v)
    if not math.isfinite(v):
        raise ParseError(f"{where}{key}: must be finite")
    return float(v)


def _numbers(d: dict, key: str, where: str = "") -> tuple:
    v = d[key]
    if not isinstance(v, list) or not v:
        raise ParseError(f"{where}{key}: expected a non-empty list of numbers")
    return tuple(_number({key: x}, key, where) for x in v)


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ParseError(f"{where}unknown key(s): {', '.join(unknown)}")


def _solver(block) -> SolverSettings:
    if not isinstance(block, dict):
        raise ParseError("solver: expected an object")
    _check_keys(block, SOLVER_KEYS, "solver.")
    kw = {}
    for k in ("tol", "damping", "eig_tol"):
        if k in block:
            kw[k] = _number(block, k, "solver.")
    for k in ("max_iters", "stencil_order", "eigenpairs", "threads"):
        if k in block:
            kw[k] = _number(block, k, "solver.", integer=True)
    for k in ("method", "mixing"):
        if k in block:
            if not isinstance(block[k], str):
                raise ParseError(f"solver.{k}: expected a string")
            kw[k] = block[k]
    if "seeds" in block:
        kw["seeds"] = tuple(int(s) for s in _numbers(block, "seeds", "solver."))
    s = SolverSettings(**kw)
    if s.method not in ("direct", "scf"):
        raise ValidationError(f"solver.method must be 'direct' or 'scf', got {s.method!r}")
    if s.mixing not in ("linear", "anderson"):
        raise ValidationError(f"solver.mixing must be 'linear' or 'anderson', got {s.mixing!r}")
    if not s.tol > 0:
        raise ValidationError("solver.tol must be positive")
    if not 0 < s.damping <= 1:
        raise ValidationError("solver.damping must lie in (0, 1]")
    if s.max_iters < 1:
        raise ValidationError("solver.max_iters must be >= 1")
    if s.threads is not None and s.threads < 1:
        raise ValidationError("solver.threads must be >= 1")
    return s


def config_from_dict(raw: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ParseError("top level: expected a JSON object")
    _check_keys(raw, TOP_KEYS, "")
    for k in REQUIRED:
        if k not in raw:
            raise ParseError(f"{k}: required key missing")
    p = _number(raw, "p", "")
    alpha = _number(raw, "alpha", "")
    lam = _number(raw, "lambda", "")
    check_exponent(p)
    centers = ()
    if "centers" in raw:
        if not isinstance(raw["centers"], list):
            raise ParseError("centers: expected a list of [x, y, z]")
        pts = []
        for i, c in enumerate(raw["centers"]):
            if not isinstance(c, list) or len(c) != 3:
                raise ParseError(f"centers[{i}]: expected [x, y, z]")
            pts.append(tuple(_number({"c": x}, "c", f"centers[{i}].") for x in c))
        centers = tuple(pts)
    solver = _solver(raw.get("solver", {}))
    n = _number(raw, "grid_points", "", integer=True) if "grid_points" in raw else DEFAULT_GRID_POINTS
    if n < 16:
        raise ValidationError(f"grid_points must be >= 16, got {n}")
    if "box_halfwidth" in raw:
        ext = _number(raw, "box_halfwidth", "")
        if not ext > 0:
            raise ValidationError("box_halfwidth must be positive")
    else:
        if not (alpha > 0 and lam > 0):
            raise ValidationError("alpha and lambda must be positive")
        ext = auto_extent(p, alpha, lam, centers)
    softening = _number(raw, "softening", "") if "softening" in raw and raw["softening"] is not None \
        else None
    params = ModelParams(p=p, alpha=alpha, lam=lam, centers=centers, grid=Grid3D(ext, n),
                         softening=softening, order=solver.stencil_order)
    seed = _number(raw, "seed", "", integer=True) if "seed" in raw else 0
    if seed_override is not None:
        seed = int(seed_override)
    if seed < 0:
        raise ValidationError("seed must be a nonnegative integer")
    lambdas = _numbers(raw, "lambdas") if "lambdas" in raw else ()
    alphas = _numbers(raw, "alphas") if "alphas" in raw else ()
    lambda2 = _number(raw, "lambda2", "") if "lambda2" in raw else None
    check = raw.get("check", {})
    if not isinstance(check, dict):
        raise ParseError("check: expected an object")
    _check_keys(check, CHECK_KEYS, "check.")
    return RunConfig(params, solver, seed, lambdas, alphas, lambda2, dict(check))


def parse_config(path, seed_override: int | None = None) -> RunConfig:
    """Read and validate a JSON configuration file.

    Raises :class:`ParseError` (with line/column or field name) for malformed
    input and :class:`ValidationError` naming the violated invariant.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw, seed_override)
