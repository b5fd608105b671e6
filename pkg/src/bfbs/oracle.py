"""Closed-form radial capacitary potentials and Bernoulli radii.

For concentric balls B(0,a) within B(0,R) in R^n the p-Laplace ring potential is
explicit, which makes it the reference solution for the 2D solver and the
free-boundary iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import bisect


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class RadialCase:
    p: float
    n: int
    a: float
    R: float

    def __post_init__(self):
        if not self.p > 1:
            raise OracleError("p must exceed 1")
        if int(self.n) != self.n or self.n < 2:
            raise OracleError("n must be an integer >= 2")
        if not (self.R > self.a > 0):
            raise OracleError("need R > a > 0")

    @property
    def beta(self) -> float:
        return (self.p - self.n) / (self.p - 1)

    @property
    def critical(self) -> bool:
        return math.isclose(self.p, self.n, rel_tol=0, abs_tol=1e-14)

    def _check(self, r: float) -> None:
        tol = 1e-12 * self.R
        if r < self.a - tol or r > self.R + tol:
            raise OracleError(f"r={r} outside [{self.a}, {self.R}]")


def radial_potential(case: RadialCase, r: float) -> float:
    case._check(r)
    a, R = case.a, case.R
    if case.critical:
        return math.log(R / r) / math.log(R / a)
    b = case.beta
    return (r**b - R**b) / (a**b - R**b)


def radial_gradient(case: RadialCase, r: float) -> float:
    """|u'(r)|, proportional to r^((1-n)/(p-1))."""
    case._check(r)
    a, R = case.a, case.R
    if case.critical:
        return 1.0 / (r * math.log(R / a))
    b = case.beta
    return abs(b * r ** (b - 1) / (a**b - R**b))


def decay_exponent(p: float, n: int) -> float:
    return (1 - n) / (p - 1)


def bernoulli_radius(p: float, n: int, a: float, c: float, rtol: float = 1e-10) -> float:
    """Outer radius R* with |u'(R*)| = c for the ring B(0,R*) minus B(0,a).

    Bisection in log R over [a(1+1e-9), a 2^40]; the outer gradient is
    continuous and decreasing in R, so a sign change brackets the unique root.
    """
    if not c > 0 or not a > 0:
        raise OracleError("need a > 0 and c > 0")

    def f(logR):
        R = math.exp(logR)
        return math.log(radial_gradient(RadialCase(p, n, a, R), R) / c)

    lo, hi = math.log(a * (1 + 1e-9)), math.log(a * 2.0**40)
    flo, fhi = f(lo), f(hi)
    if not (flo > 0 > fhi):
        raise OracleError(
            f"bernoulli radius not bracketed for p={p}, n={n}, a={a}, c={c} "
            f"(log-gradient ratio {flo:.3g} .. {fhi:.3g})"
        )
    # |log(g/c)| <= rtol/2 implies relative gradient residual below rtol
    logR = bisect(f, lo, hi, xtol=1e-15, rtol=4 * 2.0**-52, maxiter=400)
    R = math.exp(logR)
    if abs(gradient_residual(p, n, a, c, R)) > rtol:
        raise OracleError("bisection failed to reach the residual tolerance")
    return R


def gradient_residual(p: float, n: int, a: float, c: float, R: float) -> float:
    """Relative mismatch |u'(R)|/c - 1."""
    return radial_gradient(RadialCase(p, n, a, R), R) / c - 1.0
