"""Command-line front end: ``bfbs solve|verify|oracle|sweep``.

Configuration files hold flat ``key = value`` lines; ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .free_boundary import BernoulliProblem, FreeBoundaryError, solve_bernoulli
from .geometry import GeometryError, StarBody, disk, hausdorff_distance, make_body, write_boundary_csv
from .operator import OperatorError, OperatorSpec
from .oracle import OracleError, bernoulli_radius, gradient_residual
from .pde_solver import level_set, write_field_csv

log = logging.getLogger("bfbs")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    family: str = "p_laplace"
    p: float = 2.0
    Q: tuple = (1.0, 0.0, 0.0, 1.0)
    alpha: float | None = None
    lambda_cap: float | None = None
    shape: tuple = ("disk", 1.0)
    c: float = 1.0
    M: int = 256
    N: int = 128
    mode: str = "normal"
    max_iter: int = 200
    band: float = 0.01
    tol: float = 1e-8
    output_dir: str = "out"
    seed: int = 0
    sweep_p: tuple = (1.5, 2.0, 3.0)
    sweep_c: tuple = (0.5, 1.0, 2.0)
    source: dict = field(default_factory=dict, repr=False)

    def operator(self, p: float | None = None) -> OperatorSpec:
        if len(self.Q) != 4:
            raise OperatorError("operator.q needs four numbers (row-major 2x2)")
        Q = np.array(self.Q, dtype=float).reshape(2, 2)
        return OperatorSpec(self.family, self.p if p is None else p, Q, self.alpha, self.lambda_cap)

    def body(self) -> StarBody:
        return make_body(self.shape, self.M)

    def problem(self, p: float | None = None, c: float | None = None) -> BernoulliProblem:
        return BernoulliProblem(self.body(), self.operator(p), self.c if c is None else c,
                                N=self.N, tol=self.tol, band_final=self.band)

    def to_dict(self) -> dict:
        return {
            "operator.family": self.family, "operator.p": self.p, "operator.q": list(self.Q),
            "operator.alpha": self.alpha, "operator.lambda": self.lambda_cap, "domain.shape": " ".join(_shape_words(self.shape)),
            "bernoulli.c": self.c, "grid.angles": self.M, "grid.layers": self.N, "fb.mode": self.mode,
            "fb.max_iter": self.max_iter, "fb.band": self.band, "solver.tol": self.tol,
            "output.dir": self.output_dir, "seed": self.seed,
            "sweep.p": list(self.sweep_p), "sweep.c": list(self.sweep_c),
        }


def _shape_words(shape) -> list[str]:
    kind, *args = shape
    if kind == "rounded_polygon":
        V, r = args
        return [kind, repr(r)] + [f"{x!r},{y!r}" for x, y in V]
    return [kind] + [repr(a) for a in args]


def _floats(text: str) -> tuple:
    return tuple(float(w) for w in text.replace(",", " ").split())


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise ValueError("must be a positive number")
    return v


def _parse_shape(text: str) -> tuple:
    words = text.split()
    if not words:
        raise ValueError("empty shape")
    kind = words[0]
    if kind == "disk" and len(words) == 2:
        return ("disk", _positive_float(words[1]))
    if kind == "ellipse" and len(words) in (3, 4):
        phi = float(words[3]) if len(words) == 4 else 0.0
        return ("ellipse", _positive_float(words[1]), _positive_float(words[2]), phi)
    if kind == "rounded_polygon" and len(words) >= 5:
        r = float(words[1])
        V = tuple(tuple(float(t) for t in w.split(",")) for w in words[2:])
        if any(len(v) != 2 for v in V):
            raise ValueError("vertices must be written x,y")
        return ("rounded_polygon", V, r)
    raise ValueError(
        "shape must be 'disk r', 'ellipse a b [phi]' or 'rounded_polygon r x1,y1 x2,y2 x3,y3 ...'"
    )


def _choice(*opts):
    def conv(text):
        if text not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")
        return text
    return conv


def _int_at_least(lo):
    def conv(text):
        v = int(text)
        if v < lo:
            raise ValueError(f"must be an integer >= {lo}")
        return v
    return conv


def _alpha(text):
    return None if text == "auto" else _positive_float(text)


def _band(text):
    v = float(text)
    if not 0 < v < 1:
        raise ValueError("must lie in (0, 1)")
    return v


SCHEMA = {
    "operator.family": ("family", _choice("p_laplace", "quadratic_form")),
    "operator.p": ("p", float),
    "operator.q": ("Q", _floats),
    "operator.alpha": ("alpha", _alpha),
    "operator.lambda": ("lambda_cap", _alpha),
    "domain.shape": ("shape", _parse_shape),
    "bernoulli.c": ("c", _positive_float),
    "grid.angles": ("M", _int_at_least(64)),
    "grid.layers": ("N", _int_at_least(32)),
    "fb.mode": ("mode", _choice("normal", "trim")),
    "fb.max_iter": ("max_iter", _int_at_least(0)),
    "fb.band": ("band", _band),
    "solver.tol": ("tol", _positive_float),
    "output.dir": ("output_dir", str),
    "seed": ("seed", int),
    "sweep.p": ("sweep_p", _floats),
    "sweep.c": ("sweep_c", _floats),
}


def parse_config_text(text: str, name: str = "<config>") -> RunConfig:
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{name}:{lineno}: expected 'key = value'")
        key, _, val = (t.strip() for t in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"{name}:{lineno}: unknown key {key!r}")
        attr, conv = SCHEMA[key]
        if attr in values:
            raise ConfigError(f"{name}:{lineno}: duplicate key {key!r}")
        try:
            values[attr] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{name}:{lineno}: bad value for {key}: {exc}") from None
        lines[attr] = lineno
    cfg = RunConfig(**values, source=lines)

    def where(attr):
        return f"{name}:{lines[attr]}" if attr in lines else name

    # cross-field validation, reported at the line of the offending key
    try:
        cfg.operator()
    except OperatorError as exc:
        msg = str(exc)
        attr = next((a for key, a in (("p out of", "p"), ("Q", "Q"), ("operator.q", "Q"), ("alpha", "alpha"))
                     if key in msg), "family")
        raise ConfigError(f"{where(attr)}: {exc}") from None
    for p in cfg.sweep_p:
        try:
            cfg.operator(p)
        except OperatorError as exc:
            raise ConfigError(f"{where('sweep_p')}: {exc}") from None
    if any(c <= 0 for c in cfg.sweep_c):
        raise ConfigError(f"{where('sweep_c')}: sweep values of c must be positive")
    try:
        cfg.body()
    except GeometryError as exc:
        attr = "M" if "M must" in str(exc) else "shape"
        raise ConfigError(f"{where(attr)}: {exc}") from None
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, str(path))


def output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get("BFBS_OUTPUT_DIR") or cfg.output_dir)


# ------------------------------------------------------------------ outputs

def _svg_path(P: np.ndarray) -> str:
    pts = " L ".join(f"{x:.6f} {-y:.6f}" for x, y in P)
    return f"M {pts} Z"


def render_svg(K: StarBody, Omega: StarBody, levels: list[tuple[float, StarBody]], size: int = 600) -> str:
    """K, Omega and level curves as closed SVG paths (y axis flipped)."""
    P = Omega.points
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = 0.05 * float((hi - lo).max())
    x0, y0 = lo[0] - pad, -hi[1] - pad
    w, h = hi[0] - lo[0] + 2 * pad, hi[1] - lo[1] + 2 * pad
    sw = 0.003 * max(w, h)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="{x0:.6f} {y0:.6f} {w:.6f} {h:.6f}">',
        f'<path id="K" d="{_svg_path(K.points)}" fill="#bbbbbb" stroke="black" stroke-width="{sw:.6f}"/>',
        f'<path id="Omega" d="{_svg_path(Omega.points)}" fill="none" stroke="#c0392b" stroke-width="{sw:.6f}"/>',
    ]
    for t, body in levels:
        out.append(
            f'<path id="level-{t:g}" d="{_svg_path(body.points)}" fill="none" stroke="#2e86c1" '
            f'stroke-dasharray="{4 * sw:.6f}" stroke-width="{sw:.6f}"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curvature_variation(body: StarBody) -> dict:
    """Discrete curvature (turning angle per unit length) along the boundary."""
    P = body.points
    e = np.roll(P, -1, axis=0) - P
    ang = np.arctan2(e[:, 1], e[:, 0])
    turn = (ang - np.roll(ang, 1) + np.pi) % (2 * np.pi) - np.pi
    L = 0.5 * (np.linalg.norm(e, axis=1) + np.roll(np.linalg.norm(e, axis=1), 1))
    kappa = turn / L
    jump = np.abs(np.roll(kappa, -1) - kappa)
    mean = float(np.abs(kappa).mean())
    return {"kappa_min": float(kappa.min()), "kappa_max": float(kappa.max()),
            "max_jump_rel": float(jump.max() / mean) if mean > 0 else float("nan")}


def _radial_oracle(cfg: RunConfig, K: StarBody, p: float, c: float) -> float | None:
    if cfg.family != "p_laplace" or np.ptp(K.rho) > 1e-12 * K.rho.max():
        return None
    return bernoulli_radius(p, 2, float(K.rho.mean()), c)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


# --------------------------------------------------------------- commands

def run_solve(cfg: RunConfig) -> int:
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg.to_dict(), "status": "failed", "error": None}
    try:
        pb = cfg.problem()
        Om, fld, it = solve_bernoulli(pb, cfg.mode, cfg.max_iter)
    except (FreeBoundaryError, GeometryError, OperatorError, ArithmeticError, RuntimeError, ValueError) as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        rep = getattr(exc, "report", None)
        if rep is not None:
            report["iterations"] = rep.to_dict()
            rep.write_jsonl(out / "iterations.jsonl")
        _write_json(out / "report.json", report)
        log.error("solve failed: %s", exc)
        return EXIT_FAIL
    write_boundary_csv(Om, out / "boundary.csv")
    write_field_csv(fld, out / "field.csv")
    it.write_jsonl(out / "iterations.jsonl")
    levels = []
    for t in (0.25, 0.5, 0.75):
        try:
            levels.append((t, level_set(fld, t)))
        except Exception as exc:  # diagnostic output only
            log.warning("level %g not extracted: %s", t, exc)
    (out / "figure.svg").write_text(render_svg(pb.K, Om, levels))
    report.update(
        status=it.status,
        solve_meta=fld.meta.to_dict(),
        iterations=it.to_dict(),
        radius_mean=float(Om.rho.mean()),
        smoothness=curvature_variation(Om),
    )
    R = _radial_oracle(cfg, pb.K, cfg.p, cfg.c)
    if R is not None:
        report["oracle"] = {"R": R, "rel_error_max": float(np.abs(Om.rho / R - 1).max())}
    _write_json(out / "report.json", report)
    print(json.dumps({"status": it.status, "iterations": len(it.records), "radius_mean": report["radius_mean"]}))
    return EXIT_OK


def run_verify(cfg: RunConfig) -> int:
    from .verify import SuiteConfig, run_suite

    scfg = SuiteConfig(op=cfg.operator(), shape=cfg.shape, c=cfg.c, M=cfg.M, N=cfg.N, mode=cfg.mode,
                       max_iter=cfg.max_iter, band=cfg.band)
    reports = run_suite(scfg)
    payload = [r.to_dict() for r in reports]
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "verify.json", payload)
    print(json.dumps(payload, indent=2, allow_nan=True))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def run_oracle(p: float, n: int, a: float, c: float) -> int:
    try:
        R = bernoulli_radius(p, n, a, c)
    except OracleError as exc:
        print(json.dumps({"error": str(exc)}))
        return EXIT_FAIL
    print(json.dumps({"R": R, "residual": abs(gradient_residual(p, n, a, c, R))}))
    return EXIT_OK


def run_sweep(cfg: RunConfig) -> int:
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows, ok = [], True
    for p in cfg.sweep_p:
        for c in cfg.sweep_c:
            row = {"p": p, "c": c, "R_numeric": "", "R_oracle": "", "hausdorff_to_oracle": ""}
            try:
                pb = cfg.problem(p, c)
                Om, _, _ = solve_bernoulli(pb, cfg.mode, cfg.max_iter)
                row["R_numeric"] = f"{Om.rho.mean():.12g}"
                R = _radial_oracle(cfg, pb.K, p, c)
                if R is not None:
                    row["R_oracle"] = f"{R:.12g}"
                    row["hausdorff_to_oracle"] = f"{hausdorff_distance(Om, disk(R, cfg.M, pb.K.center)):.12g}"
            except (FreeBoundaryError, GeometryError, RuntimeError, ValueError) as exc:
                log.error("sweep cell p=%g c=%g failed: %s", p, c, exc)
                ok = False
            rows.append(row)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["p", "c", "R_numeric", "R_oracle", "hausdorff_to_oracle"])
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfbs", description="Exterior Bernoulli free boundary solver")
    ap.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in [("solve", "solve the free boundary problem"),
                      ("verify", "run the property-check suite"),
                      ("sweep", "solve over a grid of (p, c) values")]:
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("config", help="key = value configuration file")
    op = sub.add_parser("oracle", help="radial Bernoulli radius for concentric balls")
    op.add_argument("p", type=float)
    op.add_argument("n", type=int)
    op.add_argument("a", type=float)
    op.add_argument("c", type=float)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "oracle":
        return run_oracle(args.p, args.n, args.a, args.c)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return {"solve": run_solve, "verify": run_verify, "sweep": run_sweep}[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
