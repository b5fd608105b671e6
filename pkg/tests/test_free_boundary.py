import json
import math

import numpy as np
import pytest

from bfbs.free_boundary import (
    BernoulliProblem,
    Classification,
    FreeBoundaryError,
    classify,
    classify_trace,
    initial_subsolution,
    initial_supersolution,
    interior_gradient_ratio,
    solve_bernoulli,
    update_normal_motion,
    update_trim,
)
from bfbs.geometry import (
    GeometryError,
    StarBody,
    contains,
    disk,
    ellipse,
    hausdorff_distance,
    is_convex,
    rounded_polygon,
)
from bfbs.operator import p_laplace
from bfbs.oracle import bernoulli_radius
from bfbs.pde_solver import TraceData

from conftest import bernoulli

R2 = bernoulli_radius(2, 2, 1, 1)


def small(p=2.0, c=1.0, K=None, **kw):
    return BernoulliProblem(disk(1.0, 64) if K is None else K, p_laplace(p), c, N=32, **kw)


def radial_g(R):
    return 1.0 / (R * math.log(R))


# ----------------------------------------------------------------- problem

def test_problem_validation():
    with pytest.raises(ValueError):
        small(c=0.0)
    rho = np.full(64, 1.0)
    rho[::2] = 0.6
    with pytest.raises(GeometryError):
        small(K=StarBody((0, 0), rho))
    with pytest.raises(GeometryError, match="interior ball"):
        rounded_polygon([(-1, -1), (1, -1), (1, 1), (-1, 1)], 0.0, 64)
    assert small().r0 == pytest.approx(1.0, rel=1e-2)


# ---------------------------------------------------------------- classify

@pytest.mark.parametrize(
    "R, expected",
    [(4.0, Classification.SUPERSOLUTION), (1.1, Classification.SUBSOLUTION), (1.76322, Classification.SOLUTION)],
)
def test_classify_radial(R, expected):
    pb = BernoulliProblem(disk(1.0), p_laplace(2), 1.0)
    assert classify(pb, disk(R), band=0.01) is expected


def test_classify_trace_mixed_and_bands():
    tr = TraceData("outer", np.array([0.9, 1.1]))
    assert classify_trace(tr, 1.0, 0.01) is Classification.MIXED
    assert classify_trace(tr, 1.0, 0.1) is Classification.SOLUTION


def test_classify_preconditions():
    pb = small()
    with pytest.raises(GeometryError):
        classify(pb, disk(1.0005, 64))
    rho = np.full(64, 3.0)
    rho[::2] = 2.0
    with pytest.raises(GeometryError):
        classify(pb, StarBody((0, 0), rho))


# ------------------------------------------------------- initial domains

def test_initial_supersolution_radii():
    assert initial_supersolution(small()).circumradius() == pytest.approx(4.0)
    # smallest 4 * 2^k with 1/(R log R) <= 0.01
    R = 4.0
    while radial_g(R) > 0.01:
        R *= 2
    Om = initial_supersolution(small(c=0.01))
    assert Om.circumradius() == pytest.approx(R, rel=1e-12)
    assert R == 32.0


def test_initial_supersolution_scaling():
    a = initial_supersolution(small(c=1.0)).circumradius()
    b = initial_supersolution(small(c=0.5, K=disk(2.0, 64))).circumradius()
    assert a / 1.0 == pytest.approx(b / 2.0)


def test_initial_subsolution_nested_and_classified():
    pb = small()
    Om1 = initial_supersolution(pb)
    Om0 = initial_subsolution(pb, Om1)
    assert contains(Om1, Om0, 0.0) and contains(Om0, pb.K, 0.0)
    assert is_convex(Om0)
    assert classify(pb, Om0) is Classification.SUBSOLUTION
    # closed form: level 1-t sits at r_t = 4^t; accepted when 1/(t r_t log 4) >= 1.01
    t = 0.5
    while 1 / (t * 4**t * math.log(4)) < 1.01:
        t /= 2
    assert np.abs(Om0.rho - 4**t).max() < 2e-2


# ------------------------------------------------------------------ updates

def test_normal_motion_fixed_point():
    pb = small()
    Om = disk(3.0, 64)
    assert np.array_equal(update_normal_motion(pb, Om, TraceData("outer", np.ones(64))).rho, Om.rho)


@pytest.mark.parametrize("R", [1.2, 4.0])
def test_normal_motion_moves_toward_root(R):
    pb = small()
    Om = disk(R, 64)
    new = update_normal_motion(pb, Om, TraceData("outer", np.full(64, radial_g(R))))
    assert (new.rho.mean() - R) * (R2 - R) > 0


def test_normal_motion_tau_range():
    with pytest.raises(ValueError):
        update_normal_motion(small(), disk(3.0, 64), TraceData("outer", np.ones(64)), tau=0.0)


def test_trim_tie_break_chord():
    pb = small()
    Om = disk(4.0, 64)
    g = radial_g(4.0)
    new = update_trim(pb, Om, TraceData("outer", np.full(64, g)))
    x_cut = 4.0 - 0.25 * 4.0 * (1 - g)
    assert new.rho[0] == pytest.approx(x_cut, rel=1e-9)
    pts = new.points
    assert pts[:, 0].max() <= x_cut + 1e-9
    assert new.rho[32] == pytest.approx(4.0)
    assert contains(Om, new, 0.0)


def test_trim_unchanged_without_deficiency():
    Om = disk(3.0, 64)
    assert update_trim(small(), Om, TraceData("outer", np.ones(64))) is Om


def test_trim_depth_capped_by_gap():
    pb = small()
    Om = disk(1.2, 64)
    new = update_trim(pb, Om, TraceData("outer", np.full(64, 1e-3)))
    assert new.rho[0] >= 1.1 - 1e-9
    assert contains(new, pb.K, pb.gap_min)


# ----------------------------------------------------------------- driver

def test_solve_small_grid_radial():
    Om, f, rep = solve_bernoulli(small(), "normal", 50)
    assert rep.status == "converged"
    assert abs(Om.rho.mean() / R2 - 1) < 0.02
    assert rep.total_solves == len(rep.records)
    assert rep.records[-1].cls == "solution"


def test_fixed_point_soundness():
    pb = small()
    Om, _, _ = solve_bernoulli(pb, "normal", 50)
    Om2, _, rep = solve_bernoulli(pb, "normal", 50, start=Om)
    assert len(rep.records) == 1 and rep.status == "converged"
    assert np.array_equal(Om2.rho, Om.rho)


def test_max_iter_error_carries_report():
    with pytest.raises(FreeBoundaryError) as ei:
        solve_bernoulli(small(), "normal", 1)
    rep = ei.value.report
    assert rep.status == "max_iter" and len(rep.records) == 2


def test_bad_mode():
    with pytest.raises(ValueError):
        solve_bernoulli(small(), "gradient")


def test_report_jsonl(tmp_path):
    _, _, rep = solve_bernoulli(small(), "trim", 60)
    path = tmp_path / "it.jsonl"
    rep.write_jsonl(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(rep.records)
    assert set(rows[0]) == {"iter", "body_hash", "sup_dev", "inf_dev", "hausdorff_step", "class",
                            "solver_iters", "wall_ms"}
    assert [r["iter"] for r in rows] == list(range(len(rows)))
    assert json.loads(json.dumps(rep.to_dict()))["status"] == "converged"


def test_trim_nested_and_class_preserved():
    _, _, rep, _ = bernoulli(("disk", 1.0), 2.0, "trim")
    for a, b in zip(rep.bodies, rep.bodies[1:]):
        assert contains(a, b, -1e-3 * 2 * math.pi * a.circumradius() / a.M)
    assert all(r.cls in ("supersolution", "solution") for r in rep.records)


def test_trim_reaches_oracle_within_two_cells():
    Om, f, _, _ = bernoulli(("disk", 1.0), 2.0, "trim")
    cell = (R2 - 1.0) / f.grid.N
    assert hausdorff_distance(Om, disk(R2, Om.M)) <= 2 * cell


def test_modes_agree():
    a, f, _, _ = bernoulli(("disk", 1.0), 2.0, "normal")
    b, _, _, _ = bernoulli(("disk", 1.0), 2.0, "trim")
    assert hausdorff_distance(a, b) <= 3 * f.grid.cell_size()


def test_interior_bound_on_solution():
    _, f, rep, _ = bernoulli(("disk", 1.0), 2.0, "normal")
    assert rep.interior_bound_ok
    assert interior_gradient_ratio(f, 1.0) == pytest.approx(rep.interior_min_ratio)


def test_ellipse_solution_convex_levels():
    from bfbs.pde_solver import level_set

    Om, f, rep, _ = bernoulli(("ellipse", 1.5, 1.0, 0.0), 2.0, "normal")
    assert rep.status == "converged" and is_convex(Om)
    for t in (0.25, 0.5, 0.75):
        assert is_convex(level_set(f, t))
