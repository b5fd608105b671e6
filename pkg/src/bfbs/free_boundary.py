"""Trial free-boundary iteration for the exterior Bernoulli problem.

Trial domains are classified by their outer gradient trace g against c:
supersolutions (g <= c everywhere) form Beurling's class B, subsolutions
(g >= c) the class G. Two update rules drive a trial domain to g = c:

* ``normal``: move each boundary sample radially by a filtered,
  deficiency-proportional amount (fast; may expand or shrink);
* ``trim``:  starting from a supersolution, repeatedly cut the domain with a
  half-plane parallel to the supporting plane at the point of largest
  deficiency, so iterates form a nested decreasing sequence.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    GeometryError,
    StarBody,
    contains,
    convexify,
    disk,
    grid_eps,
    hausdorff_distance,
    interior_ball_radius,
    is_convex,
    supporting_halfplane,
    trim_halfplane,
)
from .operator import OperatorSpec
from .pde_solver import (
    LinearSolveCache,
    PotentialField,
    TraceData,
    boundary_gradient_trace,
    build_grid,
    gradient_on_level,
    level_set,
    solve_potential,
)

log = logging.getLogger(__name__)


class Classification(str, enum.Enum):
    SUBSOLUTION = "subsolution"
    SUPERSOLUTION = "supersolution"
    SOLUTION = "solution"
    MIXED = "mixed"


class FreeBoundaryError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class BernoulliProblem:
    K: StarBody
    op: OperatorSpec
    c: float
    N: int = 128
    tol: float = 1e-8
    max_picard: int = 200
    band_final: float = 0.01
    band_interior: float = 0.05
    tau: float = 0.4
    kappa: float = 0.25
    gap_min: float = 1e-3
    check_interior_ball: bool = True
    r0: float = field(default=np.nan, init=False)

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("Bernoulli constant c must be positive")
        if not is_convex(self.K):
            raise GeometryError("K must be convex")
        if self.check_interior_ball:
            self.r0 = interior_ball_radius(self.K)
            if not self.r0 > 0:
                raise GeometryError("K violates the interior ball condition")


@dataclass
class IterationRecord:
    iter: int
    body_hash: str
    sup_dev: float
    inf_dev: float
    hausdorff_step: float
    cls: str
    solver_iters: int
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "iter": self.iter,
            "body_hash": self.body_hash,
            "sup_dev": float(self.sup_dev),
            "inf_dev": float(self.inf_dev),
            "hausdorff_step": float(self.hausdorff_step),
            "class": self.cls,
            "solver_iters": self.solver_iters,
            "wall_ms": float(self.wall_ms),
        }


@dataclass
class IterationReport:
    mode: str
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    total_solves: int = 0
    bodies: list[StarBody] = field(default_factory=list)
    interior_min_ratio: float = np.nan
    interior_bound_ok: bool | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "status": self.status,
            "total_solves": self.total_solves,
            "interior_min_ratio": float(self.interior_min_ratio),
            "interior_bound_ok": self.interior_bound_ok,
            "error": self.error,
            "iterations": [r.to_dict() for r in self.records],
        }

    def write_jsonl(self, path) -> None:
        import json

        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict()) + "\n")


class _Evaluator:
    """Solves on successive trial domains, warm-starting from the last field."""

    def __init__(self, problem: BernoulliProblem):
        self.problem = problem
        self.cache = LinearSolveCache()
        self.last: PotentialField | None = None
        self.solves = 0

    def __call__(self, Omega: StarBody) -> tuple[PotentialField, TraceData]:
        pb = self.problem
        grid = build_grid(pb.K, Omega, pb.N, pb.gap_min)
        init = None
        if self.last is not None and self.last.u.shape == (grid.N + 1, grid.M):
            init = self.last.u
        f = solve_potential(pb.op, grid, pb.tol, pb.max_picard, initial=init, linear_cache=self.cache)
        self.last = f
        self.solves += 1
        return f, boundary_gradient_trace(f, "outer")


def classify_trace(trace: TraceData, c: float, band: float) -> Classification:
    g = trace.g
    sup = g.max() <= c * (1 + band)
    sub = g.min() >= c * (1 - band)
    if sup and sub:
        return Classification.SOLUTION
    if sup:
        return Classification.SUPERSOLUTION
    if sub:
        return Classification.SUBSOLUTION
    return Classification.MIXED


def classify(problem: BernoulliProblem, Omega: StarBody, band: float = 0.01) -> Classification:
    if not is_convex(Omega):
        raise GeometryError("trial domain must be convex")
    if not contains(Omega, problem.K, problem.gap_min):
        raise GeometryError("trial domain does not contain K with the required gap")
    _, trace = _Evaluator(problem)(Omega)
    return classify_trace(trace, problem.c, band)


def initial_supersolution(problem: BernoulliProblem, band: float = 0.0) -> StarBody:
    """Disk about the center of K whose outer trace is below c."""
    K = problem.K
    R = 4.0 * K.circumradius()
    ev = _Evaluator(problem)
    for _ in range(11):
        Om = disk(R, K.M, center=K.center)
        _, tr = ev(Om)
        if classify_trace(tr, problem.c, band) in (Classification.SUPERSOLUTION, Classification.SOLUTION):
            return Om
        R *= 2.0
        ev.last = None
    raise FreeBoundaryError("no supersolution disk found within 2^10 doublings")


def initial_subsolution(problem: BernoulliProblem, Omega1: StarBody, band: float = 0.01) -> StarBody:
    """Superlevel set {u > 1 - t} of the potential on Omega1 with rescaled trace >= c."""
    f, _ = _Evaluator(problem)(Omega1)
    t = 0.5
    while t >= 1e-4:
        lvl = 1.0 - t
        body = level_set(f, lvl)
        g = gradient_on_level(f, lvl) / t
        if g.min() >= problem.c * (1 + band):
            out = convexify(body)
            if not contains(out, problem.K, problem.gap_min):
                raise FreeBoundaryError("subsolution level set collapsed onto K")
            return out
        t *= 0.5
    raise FreeBoundaryError("no subsolution level found before t < 1e-4")


def _smooth(dev: np.ndarray) -> np.ndarray:
    """Damp angular mode k by 1/(1+|k|), the scaling of the boundary response."""
    M = dev.size
    k = np.abs(np.fft.fftfreq(M, 1.0 / M))
    return np.real(np.fft.ifft(np.fft.fft(dev) / (1.0 + k)))


def update_normal_motion(problem: BernoulliProblem, Omega: StarBody, trace: TraceData, tau: float | None = None) -> StarBody:
    """rho <- rho (1 + tau S[g/c - 1] / max(1, |g/c - 1|_inf)), then convexify.

    Boundary moves outward where the gradient exceeds c (a larger ring has a
    smaller gradient). S damps angular mode k by 1/(1+|k|) to keep high
    frequencies stable; it leaves constant deviations untouched, so fixed points
    are exactly traces with g = c.
    """
    tau = problem.tau if tau is None else tau
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    dev = trace.g / problem.c - 1.0
    step = _smooth(dev) / max(1.0, float(np.abs(dev).max()))
    while tau >= 1e-4:
        rho = Omega.rho * (1.0 + tau * step)
        if rho.min() > 0:
            new = convexify(Omega.with_rho(rho))
            if contains(new, problem.K, problem.gap_min):
                return new
        tau *= 0.5
    raise FreeBoundaryError("normal update cannot keep K inside the trial domain")


def update_trim(
    problem: BernoulliProblem,
    Omega: StarBody,
    trace: TraceData,
    band: float | None = None,
    select: str = "argmin",
) -> StarBody:
    """Cut with inward-shifted supporting planes where the trace falls short of c.

    ``select="argmin"`` makes a single cut at the sample of largest deficiency
    (first index on ties). ``select="all"`` cuts at every deficient sample at
    once, i.e. intersects the body with all shifted supporting half-planes.
    Depth at sample j is kappa * rho_j * (1 - g_j / c), capped at half the gap
    to K along that ray.
    """
    if select not in ("argmin", "all"):
        raise ValueError("select must be 'argmin' or 'all'")
    band = problem.band_final if band is None else band
    g = trace.g
    c = problem.c
    K = problem.K
    deficient = np.flatnonzero(g < c * (1 - band))
    if deficient.size == 0:
        return Omega
    if select == "argmin":
        deficient = np.array([int(np.argmin(g))])
    eps = problem.kappa * Omega.rho[deficient] * (1.0 - g[deficient] / c)
    eps = np.minimum(eps, 0.5 * (Omega.rho[deficient] - K.rho[deficient]))
    rho = Omega.rho.copy()
    for j, e in zip(deficient, eps):
        plane = supporting_halfplane(Omega, int(j)).shifted(float(e))
        rho = np.minimum(rho, trim_halfplane(Omega, plane).rho)
    new = Omega.with_rho(rho)
    if not is_convex(new):
        new = convexify(new)
    if not contains(new, K, problem.gap_min):
        raise FreeBoundaryError("trim would cut into K")
    return new


def interior_gradient_ratio(field: PotentialField, c: float, margin: int = 1) -> float:
    """min |grad u| / c over nodes strictly inside the ring."""
    gn = field.grad_norm[margin:-margin] if margin > 0 else field.grad_norm
    return float(gn.min() / c)


def solve_bernoulli(
    problem: BernoulliProblem,
    mode: str = "normal",
    max_iter: int = 200,
    start: StarBody | None = None,
) -> tuple[StarBody, PotentialField, IterationReport]:
    if mode not in ("normal", "trim"):
        raise ValueError("mode must be 'normal' or 'trim'")
    report = IterationReport(mode)
    if start is None:
        start = initial_supersolution(problem)
    Omega = start
    ev = _Evaluator(problem)
    band = problem.band_final
    prev_step = None
    increases = 0
    for k in range(max_iter + 1):
        t0 = time.perf_counter()
        try:
            field_, trace = ev(Omega)
        except Exception as exc:
            report.status = "failed"
            report.error = f"{type(exc).__name__}: {exc}"
            report.total_solves = ev.solves
            raise FreeBoundaryError(f"solve failed at iteration {k}: {exc}", report) from exc
        dev = trace.g / problem.c - 1.0
        cls = classify_trace(trace, problem.c, band)
        report.bodies.append(Omega)
        rec = IterationRecord(k, Omega.snapshot_hash(), float(dev.max()), float(dev.min()),
                              0.0 if prev_step is None else prev_step, cls.value,
                              field_.meta.iterations, 0.0)
        report.records.append(rec)
        if cls is Classification.SOLUTION:
            rec.wall_ms = 1e3 * (time.perf_counter() - t0)
            ratio = interior_gradient_ratio(field_, problem.c)
            report.interior_min_ratio = ratio
            report.interior_bound_ok = ratio >= 1 - problem.band_interior
            report.status = "converged"
            report.total_solves = ev.solves
            return Omega, field_, report
        if k == max_iter:
            break
        if mode == "normal":
            new = update_normal_motion(problem, Omega, trace)
        else:
            if cls not in (Classification.SUPERSOLUTION,):
                log.warning("trim iterate %d left the supersolution class (%s)", k, cls.value)
            new = update_trim(problem, Omega, trace, select="all")
            if new is Omega:
                report.status = "stalled"
                report.error = "trim cannot reduce an excess gradient"
                report.total_solves = ev.solves
                raise FreeBoundaryError("trim mode stalled: gradient exceeds c with no deficiency left", report)
        step = hausdorff_distance(Omega, new)
        if prev_step is not None and step > prev_step:
            increases += 1
        else:
            increases = 0
        if increases >= 5:
            report.status = "oscillating"
            report.error = "Hausdorff step grew 5 times in a row; reduce tau"
            report.total_solves = ev.solves
            raise FreeBoundaryError(report.error, report)
        prev_step = step
        rec.hausdorff_step = step
        rec.wall_ms = 1e3 * (time.perf_counter() - t0)
        Omega = new
    report.status = "max_iter"
    report.error = f"no convergence within {max_iter} iterations"
    report.total_solves = ev.solves
    raise FreeBoundaryError(report.error, report)
