"""Executable property checks on solved rings and Bernoulli solutions.

Each check returns a :class:`CheckReport` whose ``worst_case`` is a signed
margin: the check passes iff the margin is not below ``-tol`` (or zero for
checks whose tolerance is folded into the margin).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .free_boundary import BernoulliProblem, FreeBoundaryError, solve_bernoulli
from .geometry import (
    CONVEX_TOL,
    StarBody,
    contains,
    convexity_margin,
    disk,
    grid_eps,
    hausdorff_distance,
    make_body,
    matched_index,
    min_gap,
    rotate,
)
from .operator import OperatorSpec, check_Mp, p_laplace, quadratic_form
from .pde_solver import (
    TOL_LIN,
    NonMonotoneRay,
    PotentialField,
    _cell_centres,
    boundary_gradient_trace,
    build_grid,
    field_from_values,
    level_set,
    linearized_identities,
    solve_potential,
    weak_residual,
)
from .report import CheckReport

log = logging.getLogger(__name__)

WEAK_RESIDUAL_TOL = 5e-3
CMP_TOL = 1e-3
DECAY_TOL = 0.05
REFINE_TOL = 0.1


def _fail(name, exc, **meta) -> CheckReport:
    return CheckReport(name, False, -np.inf, metadata={"error": f"{type(exc).__name__}: {exc}", **meta})


# ------------------------------------------------------------ field surgery

def corrupt_field(field: PotentialField, j: int = 0, amp: float = 0.05) -> PotentialField:
    """Add a smooth bump of height ``amp`` to u along ray ``j`` (test sensitivity)."""
    u = field.u.copy()
    u[:, j % field.grid.M] += amp * np.sin(np.pi * field.grid.s) ** 2
    return field_from_values(field.op, field.grid, u, field.inner_value, field.outer_value)


def coarsen(field: PotentialField) -> tuple[StarBody, StarBody]:
    """Bodies of the ring at half the angular resolution."""
    g = field.grid
    return StarBody(g.K.center, g.K.rho[::2]), StarBody(g.Omega.center, g.Omega.rho[::2])


def _is_radial(body: StarBody, rtol: float = 1e-12) -> bool:
    return bool(np.ptp(body.rho) <= rtol * body.rho.max())


# ------------------------------------------------------------- level sets

def check_levelset_convexity(field: PotentialField, levels=(0.25, 0.5, 0.75), tol: float = CONVEX_TOL) -> CheckReport:
    """Superlevel sets {u > t} of a convex-ring potential are convex."""
    name = "levelset convexity"
    worst, where = np.inf, None
    per_level = {}
    for t in levels:
        try:
            m, j = convexity_margin(level_set(field, t))
        except NonMonotoneRay as exc:
            return _fail(name, exc, level=t)
        per_level[str(t)] = m
        if m < worst:
            worst, where = m, {"level": t, "j": j}
    return CheckReport(name, worst >= -tol, worst, where, {"tol": tol, "levels": list(levels), "margins": per_level})


# -------------------------------------------------------------- gradients

def check_inner_outer_domination(field: PotentialField, tol: float = CMP_TOL) -> CheckReport:
    """Inner trace at x on the boundary of K dominates the outer trace at the matched point y_x."""
    grid = field.grid
    gK = boundary_gradient_trace(field, "inner").g
    gO = boundary_gradient_trace(field, "outer").g
    match = np.array([matched_index(grid.K, grid.Omega, j) for j in range(grid.M)])
    diff = gK - gO[match]
    j = int(np.argmin(diff))
    w = float(diff[j])
    return CheckReport("inner/outer domination", w >= -tol, w, j, {"tol": tol})


def max_interior_gradient(field: PotentialField, margin: int = 1) -> float:
    return float(field.grad_norm[margin:-margin].max())


def check_gradient_bound(field: PotentialField, M_expected: float | None = None, tol: float = CMP_TOL) -> CheckReport:
    """Outer trace <= 1/d0 and interior |grad u| <= M_expected."""
    grid = field.grid
    d0 = min_gap(grid.K, grid.Omega)
    gO = boundary_gradient_trace(field, "outer").g
    slack = 1.0 / d0 - float(gO.max())
    kids = [CheckReport("outer trace <= 1/d0", slack >= -tol, slack, int(np.argmax(gO)), {"d0": d0, "tol": tol})]
    gmax = max_interior_gradient(field)
    if M_expected is not None:
        s2 = float(M_expected) - gmax
        kids.append(CheckReport("interior |grad u| <= M", s2 >= -tol * M_expected, s2, None,
                                {"M_expected": M_expected, "max_interior": gmax}))
    worst = min(k.worst_case for k in kids)
    return CheckReport("uniform gradient bound", all(k.passed for k in kids), worst, None,
                       {"d0": d0, "max_interior": gmax}, kids)


def check_gradient_refinement(fine: PotentialField, coarse: PotentialField, tol: float = 0.02) -> CheckReport:
    """max interior |grad u| changes by less than ``tol`` (relative) under refinement."""
    a, b = max_interior_gradient(fine), max_interior_gradient(coarse)
    rel = abs(a - b) / a
    return CheckReport("gradient bound refinement", rel <= tol, tol - rel, None,
                       {"fine": a, "coarse": b, "tol": tol})


def check_decay_exponent(field: PotentialField, n: int = 2, tol: float = DECAY_TOL) -> CheckReport:
    """Log-log slope of |grad u| against r over the middle half of a concentric ring."""
    grid = field.grid
    if not (_is_radial(grid.K) and _is_radial(grid.Omega)):
        raise ValueError("decay exponent check needs concentric disks")
    N = grid.N
    rows = slice(N // 4, 3 * N // 4 + 1)
    r = np.linalg.norm(grid.X[rows] - grid.K.center, axis=-1).ravel()
    g = field.grad_norm[rows].ravel()
    slope = float(np.polyfit(np.log(r), np.log(g), 1)[0])
    expected = (1 - n) / (field.op.p - 1)
    err = abs(slope - expected)
    return CheckReport("gradient decay exponent", err <= tol, tol - err, None,
                       {"slope": slope, "expected": expected, "tol": tol})


def check_interior_bound(field: PotentialField, c: float, band: float = 0.05, margin: int = 1) -> CheckReport:
    """min |grad u| >= c (1 - band) at interior nodes of a Bernoulli solution."""
    gn = field.grad_norm[margin:-margin]
    k = np.unravel_index(int(np.argmin(gn)), gn.shape)
    w = float(gn[k] / c - (1 - band))
    return CheckReport("interior gradient lower bound", w >= 0, w, (int(k[0]) + margin, int(k[1])),
                       {"c": c, "band": band, "min_ratio": float(gn[k] / c)})


def check_nondegeneracy(field: PotentialField) -> CheckReport:
    """0 < min |grad u| <= max |grad u| < inf on the closed ring (smoke test)."""
    gn = field.grad_norm
    lo, hi = float(gn.min()), float(gn.max())
    ok = bool(lo > 0 and np.isfinite(hi))
    return CheckReport("gradient nondegeneracy", ok, lo, None, {"min": lo, "max": hi})


# ------------------------------------------------------------- free boundary

def check_nesting(bodies: list[StarBody]) -> CheckReport:
    """Each iterate contains the next up to one grid epsilon."""
    worst, where = np.inf, None
    from .geometry import signed_clearance

    for k, (a, b) in enumerate(zip(bodies, bodies[1:])):
        m = float(signed_clearance(a, b.points).min()) + grid_eps(a)
        if m < worst:
            worst, where = m, k
    if worst == np.inf:
        worst = 0.0
    return CheckReport("trim nesting", worst >= 0, worst, where, {"steps": max(len(bodies) - 1, 0)})


def check_uniqueness(problem: BernoulliProblem, starts: list[StarBody], mode: str = "normal",
                     max_iter: int = 200, cells: float = 3.0) -> CheckReport:
    """Runs from several supersolution starts converge to the same boundary."""
    name = "uniqueness"
    sols, cell = [], 0.0
    for k, st in enumerate(starts):
        try:
            Om, f, _ = solve_bernoulli(problem, mode, max_iter, start=st)
        except FreeBoundaryError as exc:
            return _fail(name, exc, start=k)
        sols.append(Om)
        cell = max(cell, f.grid.cell_size())
    dmax, where = 0.0, None
    for (a, A), (b, B) in itertools.combinations(enumerate(sols), 2):
        d = hausdorff_distance(A, B)
        if d > dmax:
            dmax, where = d, (a, b)
    w = cells * cell - dmax
    return CheckReport(name, w >= 0, w, where, {"max_hausdorff": dmax, "cell": cell, "cells": cells,
                                                 "radii_mean": [float(s.rho.mean()) for s in sols]})


# ---------------------------------------------------------------- symmetry

def _rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def check_rotation_covariance(op: OperatorSpec, K: StarBody, Omega: StarBody, phi: float, N: int = 128,
                              tol: float | None = None, conjugate: bool = True) -> CheckReport:
    """Solve on the ring and on its rotation (with the conjugated operator) and compare.

    With ``tol=None`` the tolerance is twice a Richardson estimate of the
    discretization error, measured from a solve at half resolution.
    """
    f1 = solve_potential(op, build_grid(K, Omega, N))
    op2 = op.conjugated(_rotation(phi)) if conjugate else op
    f2 = solve_potential(op2, build_grid(rotate(K, phi), rotate(Omega, phi), N))
    M = K.M
    # the rotated grid's node (i, j) is the image of angle theta_j - phi at row i
    t = np.append(K.theta, 2 * np.pi)
    uu = np.concatenate([f1.u, f1.u[:, :1]], axis=1)
    back = CubicSpline(t, uu, axis=1, bc_type="periodic")((K.theta - phi) % (2 * np.pi))
    shift = phi / (2 * np.pi / M)
    if abs(shift - round(shift)) < 1e-12:
        back = np.roll(f1.u, round(shift), axis=1)
    diff = float(np.abs(back - f2.u).max())
    meta = {"phi": phi, "max_diff": diff, "conjugated": conjugate}
    if tol is None:
        Kc, Oc = StarBody(K.center, K.rho[::2]), StarBody(Omega.center, Omega.rho[::2])
        fc = solve_potential(op, build_grid(Kc, Oc, N // 2))
        est = float(np.abs(f1.u[::2, ::2] - fc.u).max()) / 3.0
        tol = 2.0 * est + 1e-9
        meta["disc_error"] = est
    meta["tol"] = tol
    k = np.unravel_index(int(np.argmax(np.abs(back - f2.u))), back.shape)
    return CheckReport("rotation covariance", diff <= tol, tol - diff, (int(k[0]), int(k[1])), meta)


# ------------------------------------------------- Harnack / Caccioppoli

def _balls(field: PotentialField, frac: float, count: int = 8):
    """Mid-ring points on ``count`` equally spaced rays and radius ``frac`` * min ring width."""
    g = field.grid
    js = (np.arange(count) * g.M) // count
    centres = g.K.center + (g.K.rho[js] + 0.5 * g.width[js])[:, None] * g.K.directions[js]
    return centres, frac * float(g.width.min())


def sample_nodal(field: PotentialField, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of nodal ``values`` in (s, theta) at physical points."""
    g = field.grid
    d = np.asarray(pts, dtype=float) - g.K.center
    th = np.arctan2(d[..., 1], d[..., 0]) % (2 * np.pi)
    r = np.hypot(d[..., 0], d[..., 1])
    jf = th / g.ht
    j0 = np.floor(jf).astype(int) % g.M
    j1 = (j0 + 1) % g.M
    wj = jf - np.floor(jf)
    rk = (1 - wj) * g.K.rho[j0] + wj * g.K.rho[j1]
    ro = (1 - wj) * g.Omega.rho[j0] + wj * g.Omega.rho[j1]
    sf = np.clip((r - rk) / (ro - rk), 0.0, 1.0) * g.N
    i0 = np.minimum(np.floor(sf).astype(int), g.N - 1)
    wi = sf - i0
    v = values
    return ((1 - wi) * ((1 - wj) * v[i0, j0] + wj * v[i0, j1])
            + wi * ((1 - wj) * v[i0 + 1, j0] + wj * v[i0 + 1, j1]))


def _circle(x0, r, n=128):
    t = 2 * np.pi * np.arange(n) / n
    return x0 + r * np.stack([np.cos(t), np.sin(t)], axis=-1)


def _disk_rule(x0, r, nr=12, nt=48):
    """Gauss-Legendre in radius times uniform angles: points and weights on B(x0, r)."""
    z, w = np.polynomial.legendre.leggauss(nr)
    rho = 0.5 * r * (z + 1)
    wr = 0.5 * r * w * rho
    t = 2 * np.pi * np.arange(nt) / nt
    pts = x0 + rho[:, None, None] * np.stack([np.cos(t), np.sin(t)], axis=-1)[None]
    wts = wr[:, None] * np.full(nt, 2 * np.pi / nt)[None]
    return pts.reshape(-1, 2), wts.ravel()


def harnack_constant(field: PotentialField, count: int = 8) -> float:
    """max over sampled B(w, r), B(w, 4r) inside the ring, of max u / min u on B(w, r).

    u is a solution, so its extremes over the ball sit on the bounding circle.
    """
    centres, r = _balls(field, 0.1, count)
    worst = 0.0
    for x0 in centres:
        vals = sample_nodal(field, field.u, _circle(x0, r))
        lo = vals.min()
        worst = max(worst, np.inf if lo <= 0 else float(vals.max() / lo))
    return worst


def caccioppoli_constant(field: PotentialField, count: int = 8) -> float:
    """max over sampled balls of r^(p-n) int_{B(w,r)} |grad u|^p / max_{B(w,2r)} u^p, n = 2."""
    p = field.op.p
    centres, r = _balls(field, 0.2, count)
    gp = field.grad_norm ** p
    worst = 0.0
    for x0 in centres:
        pts, wts = _disk_rule(x0, r)
        num = r ** (p - 2) * float(np.sum(sample_nodal(field, gp, pts) * wts))
        top = float(sample_nodal(field, field.u, _circle(x0, 2 * r)).max())
        worst = max(worst, np.inf if top <= 0 else num / top**p)
    return worst


def _stability(name: str, fine: float, coarse: float, tol: float) -> CheckReport:
    if not (np.isfinite(fine) and np.isfinite(coarse)):
        return CheckReport(name, False, -np.inf, None, {"fine": fine, "coarse": coarse, "tol": tol})
    rel = abs(fine - coarse) / abs(fine)
    return CheckReport(name, rel <= tol, tol - rel, None, {"fine": fine, "coarse": coarse, "tol": tol})


def check_harnack(fine: PotentialField, coarse: PotentialField, tol: float = REFINE_TOL) -> CheckReport:
    """Measured Harnack constant is finite and stable under refinement."""
    return _stability("Harnack constant", harnack_constant(fine), harnack_constant(coarse), tol)


def check_caccioppoli(fine: PotentialField, coarse: PotentialField, tol: float = REFINE_TOL) -> CheckReport:
    """Measured Caccioppoli constant is finite and stable under refinement."""
    return _stability("Caccioppoli constant", caccioppoli_constant(fine), caccioppoli_constant(coarse), tol)


def ordering_report(lower: PotentialField, upper: PotentialField, tol: float = 1e-9) -> CheckReport:
    d = upper.u - lower.u
    k = np.unravel_index(int(np.argmin(d)), d.shape)
    w = float(d[k])
    return CheckReport("comparison principle", w >= -tol, w, (int(k[0]), int(k[1])), {"tol": tol})


def check_comparison(field: PotentialField, perturb: float = 0.1, tol: float = 1e-9) -> CheckReport:
    """Raising the data on the boundary of K raises the solution at every node."""
    upper = solve_potential(field.op, field.grid, inner_value=field.inner_value + perturb,
                            outer_value=field.outer_value)
    rep = ordering_report(field, upper, tol)
    rep.metadata["perturb"] = perturb
    return rep


def check_weak_residual(field: PotentialField, tol: float = WEAK_RESIDUAL_TOL) -> CheckReport:
    r = weak_residual(field)
    return CheckReport("weak A-harmonicity", r <= tol, tol - r, None, {"residual": r, "tol": tol})


# ------------------------------------------------------------------ suite

@dataclass
class SuiteConfig:
    op: OperatorSpec = field(default_factory=lambda: p_laplace(2.0))
    shape: tuple = ("disk", 1.0)
    c: float = 1.0
    M: int = 256
    N: int = 128
    mode: str = "normal"
    max_iter: int = 200
    band: float = 0.01
    levels: tuple = (0.1, 0.25, 0.5, 0.75, 0.9)
    phi: float = np.pi / 7
    corrupt: bool = False
    uniqueness: bool = True


def run_suite(cfg: SuiteConfig) -> list[CheckReport]:
    """Solve the Bernoulli problem for ``cfg`` and run every check on the result.

    Failures are collected, never raised. With ``corrupt=True`` the converged
    field is perturbed along one ray before the field-level checks, which the
    convexity and residual checks must detect.
    """
    out: list[CheckReport] = [check_Mp(cfg.op)]
    K = make_body(cfg.shape, cfg.M)
    try:
        pb = BernoulliProblem(K, cfg.op, cfg.c, N=cfg.N, band_final=cfg.band)
        Om, fld, rep = solve_bernoulli(pb, cfg.mode, cfg.max_iter)
    except Exception as exc:
        out.append(_fail("bernoulli solve", exc))
        return out
    out.append(CheckReport("bernoulli solve", True, float(cfg.band - max(abs(rep.records[-1].sup_dev),
                                                                        abs(rep.records[-1].inf_dev))),
                           None, {"iterations": len(rep.records), "mode": cfg.mode}))
    out.append(check_interior_bound(fld, cfg.c))
    if cfg.mode == "trim":
        out.append(check_nesting(rep.bodies))
    work = corrupt_field(fld) if cfg.corrupt else fld
    out.append(check_levelset_convexity(work, cfg.levels))
    out.append(check_weak_residual(work))
    out.append(linearized_identities(work, TOL_LIN))
    out.append(check_inner_outer_domination(fld))
    Kc, Oc = coarsen(fld)
    try:
        coarse = solve_potential(cfg.op, build_grid(Kc, Oc, cfg.N // 2))
    except Exception as exc:
        out.append(_fail("coarse solve", exc))
        return out
    out.append(check_gradient_bound(fld, M_expected=max_interior_gradient(coarse) * 1.02))
    out.append(check_gradient_refinement(fld, coarse))
    out.append(check_nondegeneracy(fld))
    out.append(check_harnack(fld, coarse))
    out.append(check_caccioppoli(fld, coarse))
    out.append(check_comparison(fld))
    if _is_radial(K) and _is_radial(Om):
        out.append(check_decay_exponent(fld))
    try:
        out.append(check_rotation_covariance(cfg.op, K, Om, cfg.phi, cfg.N))
    except Exception as exc:
        out.append(_fail("rotation covariance", exc))
    if cfg.uniqueness:
        R0 = K.circumradius()
        starts = [disk(3 * R0, cfg.M, K.center), disk(6 * R0, cfg.M, K.center)]
        out.append(check_uniqueness(pb, starts, cfg.mode, cfg.max_iter))
    return out
