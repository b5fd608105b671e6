"""Acceptance criteria 1-10, one test each.

Every test appends a one-line verdict to ``conftest.ACCEPTANCE_LINES`` (shown
in the terminal summary) and prints it. Run directly with
``python tests/test_acceptance.py`` for the same output without the rest of
the suite.
"""

import math
import sys

import numpy as np
import pytest

from bfbs.geometry import disk, hausdorff_distance
from bfbs.operator import check_Mp, default_alpha, p_laplace
from bfbs.oracle import bernoulli_radius
from bfbs.pde_solver import identity_floor, linearized_identities, TOL_LIN
from bfbs.verify import (
    check_decay_exponent,
    check_gradient_bound,
    check_inner_outer_domination,
    check_interior_bound,
    check_levelset_convexity,
    check_nesting,
    corrupt_field,
)

from conftest import ACCEPTANCE_LINES, ROUNDED_SQUARE, bernoulli, radial_exact, radial_field

DISK = ("disk", 1.0)
LEVELS = (0.1, 0.25, 0.5, 0.75, 0.9)
CONVEX_SHAPES = [("ellipse", 2.0, 1.0, 0.0), ROUNDED_SQUARE]
UNIQUE_SHAPES = [DISK, ("ellipse", 1.5, 1.0, 0.0)]


def record(k, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def solutions():
    """Every converged Bernoulli case used by the acceptance suite."""
    cases = [(DISK, 2.0, "normal", None), (DISK, 2.0, "trim", None),
             (DISK, 3.0, "normal", None), (DISK, 3.0, "trim", None)]
    cases += [(s, p, "normal", None) for s in CONVEX_SHAPES for p in (2.0, 3.0)]
    cases += [(s, p, "normal", f) for s in UNIQUE_SHAPES for p in (2.0, 3.0) for f in (3.0, 6.0)]
    return cases


def label(shape, p, mode, start):
    name = shape[0] if shape[0] != "ellipse" else f"ellipse{shape[1:3]}"
    return f"{name} p={p:g} {mode}" + ("" if start is None else f" start={start:g}x")


def test_criterion_1_radial_p2():
    R = bernoulli_radius(2, 2, 1, 1)
    Om, f, rep, secs = bernoulli(DISK, 2.0, "normal")
    err = float(np.abs(Om.rho / R - 1).max())
    ok = rep.status == "converged" and err <= 0.01 and secs <= 60
    assert record(1, ok, f"radius error {err:.2e} (tol 1e-2), {secs:.1f}s (limit 60s), R*={R:.9f}")


def test_criterion_2_radial_p3_both_modes():
    R = bernoulli_radius(3, 2, 1, 1)
    parts, ok = [], True
    for mode in ("normal", "trim"):
        Om, _, rep, _ = bernoulli(DISK, 3.0, mode)
        err = float(np.abs(Om.rho / R - 1).max())
        ok &= rep.status == "converged" and err <= 0.01
        parts.append(f"{mode} {err:.2e}")
    assert record(2, ok, f"radius error vs {R:.7f}: " + ", ".join(parts) + " (tol 1e-2)")


def test_criterion_3_pde_accuracy():
    parts, ok = [], True
    for p in (1.5, 2.0, 3.0, 4.0):
        errs = []
        for N, M in [(64, 128), (128, 256), (256, 512)]:
            f = radial_field(p, N, M)
            errs.append(float(np.abs(f.u - radial_exact(f.grid, p, 1.0, 2.0)).max()))
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        ok &= errs[1] <= 5e-4 and min(orders) >= 1.8
        parts.append(f"p={p:g} err={errs[1]:.1e} order={min(orders):.2f}")
    assert record(3, ok, "; ".join(parts) + " (tol 5e-4, order >= 1.8)")


def test_criterion_4_levelset_convexity():
    worst, ok = np.inf, True
    for shape in CONVEX_SHAPES:
        for p in (2.0, 3.0):
            _, f, rep, _ = bernoulli(shape, p, "normal")
            r = check_levelset_convexity(f, LEVELS)
            ok &= rep.status == "converged" and r.worst_case >= -1e-6
            worst = min(worst, r.worst_case)
    _, f, _, _ = bernoulli(CONVEX_SHAPES[0], 2.0, "normal")
    neg = check_levelset_convexity(corrupt_field(f), LEVELS)
    ok &= not neg.passed
    assert record(4, ok, f"min margin {worst:.2e} over 4 solutions (tol -1e-6); "
                         f"corrupted field margin {neg.worst_case:.2e} -> {'fails' if not neg.passed else 'PASSES'}")


def test_criterion_5_gradient_lemmas():
    ok, slopes = True, []
    for p in (2.0, 3.0, 4.0):
        r = check_decay_exponent(radial_field(p, 128, 256, 1.0, 4.0), n=2, tol=0.05)
        ok &= r.passed
        slopes.append(f"p={p:g} {r.metadata['slope']:.3f}/{r.metadata['expected']:.3f}")
    rings = [bernoulli(*case)[1] for case in solutions()]
    rings += [radial_field(p) for p in (1.5, 2.0, 3.0, 4.0)]
    bound = min(check_gradient_bound(f, tol=1e-3).children[0].worst_case for f in rings)
    dom = min(check_inner_outer_domination(f, tol=1e-3).worst_case for f in rings)
    ok &= bound >= -1e-3 and dom >= -1e-3
    assert record(5, ok, "decay " + ", ".join(slopes) + f" (tol 0.05); 1/d0 slack {bound:.3e}, "
                         f"domination margin {dom:.3e} on {len(rings)} rings (tol -1e-3)")


def test_criterion_6_uniqueness():
    parts, ok = [], True
    for shape in UNIQUE_SHAPES:
        for p in (2.0, 3.0):
            A, fa, ra, _ = bernoulli(shape, p, "normal", 3.0)
            B, fb, rb, _ = bernoulli(shape, p, "normal", 6.0)
            cell = max(fa.grid.cell_size(), fb.grid.cell_size())
            d = hausdorff_distance(A, B)
            ok &= ra.status == rb.status == "converged" and d <= 3 * cell
            parts.append(f"{shape[0]} p={p:g} {d / cell:.2f} cells")
    assert record(6, ok, "Hausdorff between 3x/6x starts: " + ", ".join(parts) + " (tol 3)")


def test_criterion_7_interior_bound():
    worst, ok = np.inf, True
    for case in solutions():
        _, f, _, _ = bernoulli(*case)
        r = check_interior_bound(f, 1.0, 0.05)
        ok &= r.passed
        worst = min(worst, r.metadata["min_ratio"])
    assert record(7, ok, f"min interior |grad u|/c = {worst:.4f} over {len(solutions())} solutions (tol 0.95)")


def test_criterion_8_operator_structure():
    parts, ok = [], True
    for p in (1.5, 2.0, 3.0, 4.0):
        op = p_laplace(p)
        a = max(p - 1, 1 / (p - 1))
        assert default_alpha("p_laplace", p) == pytest.approx(a)
        good = check_Mp(op, a + 1e-9)
        bad = check_Mp(op, 0.75 * a)
        kids = {c.name: c for c in good.children}
        hom = kids["homogeneity"].metadata["max_relative_error"]
        mono = kids["monotonicity"].metadata["min_inner_over_dist2"]
        ok &= good.passed and not bad.passed and hom <= 1e-12 and mono > 0
        parts.append(f"p={p:g} hom={hom:.0e} mono={mono:.3f}")
    assert record(8, ok, "check_Mp passes at alpha+1e-9, fails at 0.75 alpha; " + ", ".join(parts))


def test_criterion_9_linearized_identities():
    worst_id, worst_ineq, ok = 0.0, np.inf, True
    for case in solutions():
        _, f, _, _ = bernoulli(*case)
        r = linearized_identities(f)
        kids = r.children
        ok &= r.passed
        worst_id = max(worst_id, kids[0].metadata["residual"], kids[1].metadata["residual"])
        worst_ineq = min(worst_ineq, kids[2].metadata["min_scaled"])
    floor = identity_floor(128)
    assert record(9, ok, f"max identity residual {worst_id:.2e} (floor {floor:.2e} at N=128); "
                         f"min scaled L_u|grad u|^2 {worst_ineq:.2e} (tol {-TOL_LIN:g})")


def test_criterion_10_trim_nesting():
    Om, f, rep, _ = bernoulli(DISK, 2.0, "trim")
    r = check_nesting(rep.bodies)
    ok = rep.status == "converged" and r.passed and len(rep.bodies) >= 2
    R = bernoulli_radius(2, 2, 1, 1)
    assert record(10, ok, f"{len(rep.bodies)} iterates, worst nesting margin {r.worst_case:.2e} "
                          f"(tol -eps_grid), final Hausdorff to oracle {hausdorff_distance(Om, disk(R, Om.M)):.2e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
