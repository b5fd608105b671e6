import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import lambertw

from bfbs.oracle import (
    OracleError,
    RadialCase,
    bernoulli_radius,
    decay_exponent,
    gradient_residual,
    radial_gradient,
    radial_potential,
)


def test_potential_examples():
    assert radial_potential(RadialCase(2, 2, 1, 2), math.sqrt(2)) == pytest.approx(0.5, abs=1e-15)
    c = RadialCase(3, 2, 1, 4)
    # beta = (p - n) / (p - 1) = 1/2, so u = (sqrt r - 2) / (1 - 2) = 2 - sqrt r
    assert c.beta == 0.5
    assert radial_potential(c, 4.0) == pytest.approx(0.0, abs=1e-15)
    assert radial_potential(c, 1.0) == pytest.approx(1.0)
    for r in (1.0, 1.7, 2.5, 4.0):
        assert radial_potential(c, r) == pytest.approx(2 - math.sqrt(r))


def test_p3_potential_solves_radial_equation():
    # r |u'| u' must be constant; the reciprocal-root profile 2 r^(-1/2) - 1 fails this
    c = RadialCase(3, 2, 1, 4)
    r = np.linspace(1.0, 4.0, 7)
    flux = r * np.array([radial_gradient(c, x) for x in r]) ** 2
    assert np.allclose(flux, flux[0], rtol=1e-12)
    wrong = r * (r**-1.5) ** 2
    assert not np.allclose(wrong, wrong[0], rtol=1e-3)


def test_gradient_examples():
    assert radial_gradient(RadialCase(2, 2, 1, 2), 2.0) == pytest.approx(1 / (2 * math.log(2)))
    assert radial_gradient(RadialCase(2, 2, 1, 2), 2.0) == pytest.approx(0.721348, abs=1e-6)
    c = RadialCase(2, 2, 1, 2)
    assert radial_gradient(c, 2.0) / radial_gradient(c, 1.0) == pytest.approx(0.5)
    # |u'| = r^(-1/2) / 2
    assert radial_gradient(RadialCase(3, 2, 1, 4), 4.0) == pytest.approx(0.25)
    assert radial_gradient(RadialCase(3, 2, 1, 4), 1.0) == pytest.approx(0.5)


def test_domain_errors():
    with pytest.raises(OracleError):
        radial_potential(RadialCase(2, 2, 1, 2), 2.5)
    with pytest.raises(OracleError):
        radial_gradient(RadialCase(2, 2, 1, 2), 0.9)
    with pytest.raises(OracleError):
        RadialCase(2, 2, 2, 1)
    with pytest.raises(OracleError):
        RadialCase(1.0, 2, 1, 2)
    with pytest.raises(OracleError):
        RadialCase(2, 1, 1, 2)


@pytest.mark.parametrize("p,n", [(1.5, 2), (2, 2), (3, 2), (4, 2), (2, 3), (3, 3), (4, 3), (2.5, 5)])
def test_gradient_matches_derivative_of_potential(p, n):
    c = RadialCase(p, n, 1.0, 3.0)
    for r in (1.2, 2.0, 2.8):
        h = 1e-6
        fd = (radial_potential(c, r + h) - radial_potential(c, r - h)) / (2 * h)
        assert radial_gradient(c, r) == pytest.approx(abs(fd), rel=1e-7)


@pytest.mark.parametrize("p,n", [(1.5, 2), (2, 2), (3, 2), (4, 2), (2, 3), (3, 3), (5, 3), (3, 5)])
def test_decay_slope(p, n):
    c = RadialCase(p, n, 1.0, 10.0)
    r1, r2 = 2.0, 7.0
    slope = (math.log(radial_gradient(c, r2)) - math.log(radial_gradient(c, r1))) / math.log(r2 / r1)
    assert slope == pytest.approx(decay_exponent(p, n), abs=1e-10)


@pytest.mark.parametrize("p,n", [(1.5, 2), (2, 2), (3, 2), (3, 3), (4, 5)])
def test_discrete_radial_equation_second_order(p, n):
    """(r^(n-1) |u'|^(p-2) u')' = 0 by a three-point flux difference; residual is O(h^2)."""
    c = RadialCase(p, n, 1.0, 2.0)
    res = []
    for m in (40, 80, 160):
        r = np.linspace(1.0, 2.0, m + 1)
        u = np.array([radial_potential(c, x) for x in r])
        h = r[1] - r[0]
        rm = 0.5 * (r[1:] + r[:-1])
        du = np.diff(u) / h
        flux = rm ** (n - 1) * np.abs(du) ** (p - 2) * du
        res.append(np.abs(np.diff(flux) / h).max() / np.abs(flux).max())
    assert res[0] / res[1] == pytest.approx(4, rel=0.1)
    assert res[1] / res[2] == pytest.approx(4, rel=0.1)


def test_bernoulli_radius_p2_lambert():
    R = bernoulli_radius(2, 2, 1, 1)
    assert R == pytest.approx(1.763222834, abs=1e-9)
    # R log R = 1  <=>  R = 1 / W(1)
    assert R == pytest.approx(1 / lambertw(1).real, rel=1e-12)
    assert abs(1 / (R * math.log(R)) - 1) <= 1e-10


@pytest.mark.parametrize("a,c", [(1, 0.1), (0.5, 3.0), (2.0, 1.0), (1, 20.0)])
def test_bernoulli_radius_p2_general_lambert(a, c):
    # 1 / (R log(R/a)) = c, x = log(R/a): x e^x = 1/(a c)
    x = lambertw(1 / (a * c)).real
    assert bernoulli_radius(2, 2, a, c) == pytest.approx(a * math.exp(x), rel=1e-11)


def test_bernoulli_radius_p3_closed_form():
    # beta = 1/2: 0.5 / (R - sqrt R) = 1  =>  sqrt R = (1 + sqrt 3) / 2
    R = bernoulli_radius(3, 2, 1, 1)
    assert R == pytest.approx(((1 + math.sqrt(3)) / 2) ** 2, rel=1e-12)


def test_bernoulli_radius_known_value():
    assert bernoulli_radius(2, 2, 1, 1 / (2 * math.log(2))) == pytest.approx(2.0, rel=1e-12)


def test_bernoulli_radius_large_c_pinches():
    Rs = [bernoulli_radius(2, 2, 1, c) for c in (10, 100, 1000)]
    assert Rs[0] > Rs[1] > Rs[2] > 1
    assert Rs[2] - 1 < 2e-3


def test_bernoulli_radius_bracketing_failure():
    with pytest.raises(OracleError):
        bernoulli_radius(2, 2, 1, 1e-30)
    with pytest.raises(OracleError):
        bernoulli_radius(2, 2, 1, -1)


@settings(max_examples=30, deadline=None)
@given(p=st.floats(1.2, 8), n=st.integers(2, 5), c1=st.floats(0.2, 5), c2=st.floats(0.2, 5))
def test_bernoulli_radius_decreasing_in_c(p, n, c1, c2):
    if abs(c1 - c2) < 1e-3:
        return
    lo, hi = sorted((c1, c2))
    assert bernoulli_radius(p, n, 1.0, lo) > bernoulli_radius(p, n, 1.0, hi)


@settings(max_examples=30, deadline=None)
@given(p=st.floats(1.2, 8), n=st.integers(2, 5), a1=st.floats(0.2, 5), a2=st.floats(0.2, 5))
def test_bernoulli_radius_increasing_in_a(p, n, a1, a2):
    if abs(a1 - a2) < 1e-3:
        return
    lo, hi = sorted((a1, a2))
    assert bernoulli_radius(p, n, lo, 1.0) < bernoulli_radius(p, n, hi, 1.0)


@settings(max_examples=30, deadline=None)
@given(p=st.floats(1.2, 8), n=st.integers(2, 5), s=st.floats(0.1, 10), c=st.floats(0.2, 5))
def test_bernoulli_radius_scaling(p, n, s, c):
    R = bernoulli_radius(p, n, 1.0, c)
    assert bernoulli_radius(p, n, s, c / s) == pytest.approx(s * R, rel=1e-9)


def test_residual_reported():
    R = bernoulli_radius(4, 2, 1, 1)
    assert abs(gradient_residual(4, 2, 1, 1, R)) <= 1e-10
