"""A-harmonic operator families of class M_p(alpha) and their structural checks.

Two families are built in:

* ``p_laplace``:       A(eta) = |eta|^(p-2) eta
* ``quadratic_form``:  A(eta) = (eta . Q eta)^((p-2)/2) Q eta

Both are (p-1)-homogeneous with closed-form Jacobians. All functions accept a
single 2-vector or a stack of them with shape ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .report import CheckReport

P_MIN, P_MAX = 1.2, 8.0
FAMILIES = ("p_laplace", "quadratic_form")


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    family: str = "p_laplace"
    p: float = 2.0
    Q: np.ndarray = field(default_factory=lambda: np.eye(2))
    alpha: float | None = None
    lambda_cap: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise OperatorError(f"unknown operator family {self.family!r}")
        if not (P_MIN <= self.p <= P_MAX):
            raise OperatorError(f"p out of supported range [{P_MIN}, {P_MAX}]: {self.p}")
        Q = np.array(self.Q, dtype=float).reshape(2, 2)
        if self.family == "p_laplace" and not np.allclose(Q, np.eye(2)):
            raise OperatorError("p_laplace requires Q = identity")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-14):
            raise OperatorError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise OperatorError("Q must be positive definite")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(self.family, self.p, Q))
        if self.lambda_cap is None:
            object.__setattr__(self, "lambda_cap", default_lambda(self.p, Q))
        if self.alpha < 1 or self.lambda_cap < 1:
            raise OperatorError("alpha and lambda must be >= 1")

    @property
    def is_linear(self) -> bool:
        return self.p == 2.0

    def conjugated(self, R: np.ndarray) -> "OperatorSpec":
        """Operator seen by a field rotated by ``R``: Q -> R Q R^T."""
        if self.family == "p_laplace":
            return self
        R = np.asarray(R, dtype=float)
        Qr = R @ self.Q @ R.T
        return OperatorSpec("quadratic_form", self.p, 0.5 * (Qr + Qr.T), self.alpha, self.lambda_cap)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "p": self.p,
            "Q": self.Q.tolist(),
            "alpha": self.alpha,
            "lambda": self.lambda_cap,
        }


def p_laplace(p: float) -> OperatorSpec:
    return OperatorSpec("p_laplace", p)


def quadratic_form(p: float, Q) -> OperatorSpec:
    return OperatorSpec("quadratic_form", p, np.asarray(Q, dtype=float))


def default_alpha(family: str, p: float, Q=None) -> float:
    """Smallest alpha implied by the eigenvalue bounds of the Jacobian.

    With q = eta.Q eta, the Jacobian quadratic form lies between
    min(1, p-1) q^m xi.Q xi and max(1, p-1) q^m xi.Q xi, m = (p-2)/2.
    """
    lam = np.array([1.0, 1.0]) if Q is None else np.linalg.eigvalsh(np.asarray(Q, dtype=float))
    lo, hi = lam.min(), lam.max()
    m = 0.5 * (p - 2.0)
    upper = max(1.0, p - 1.0) * hi * max(lo**m, hi**m)
    lower = min(1.0, p - 1.0) * lo * min(lo**m, hi**m)
    return float(max(upper, 1.0 / lower))


def default_lambda(p: float, Q=None) -> float:
    scale = 1.0
    if Q is not None:
        lam = np.linalg.eigvalsh(np.asarray(Q, dtype=float))
        scale = (lam.max() / lam.min()) ** (abs(p - 2.0) / 2.0 + 2.0) * max(lam.max(), 1 / lam.min()) ** (p / 2.0)
    return float(max(1.0, 4.0 * abs(p - 2.0) * (2.0 + abs(p - 2.0)) * 2.0 ** abs(p - 3.0) * scale))


def _quad(op: OperatorSpec, eta: np.ndarray):
    Qeta = eta @ op.Q  # Q symmetric
    q = np.einsum("...i,...i->...", eta, Qeta)
    return q, Qeta


def eval_A(op: OperatorSpec, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    q, Qeta = _quad(op, eta)
    m = 0.5 * (op.p - 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(q > 0, np.power(np.where(q > 0, q, 1.0), m), 0.0)
    return scale[..., None] * Qeta


def _jacobian_from_q(op: OperatorSpec, q, Qeta) -> np.ndarray:
    m = 0.5 * (op.p - 2.0)
    outer = np.einsum("...i,...j->...ij", Qeta, Qeta)
    return np.power(q, m)[..., None, None] * (
        op.Q + (op.p - 2.0) * outer / q[..., None, None]
    )


def eval_jacobian(op: OperatorSpec, eta) -> np.ndarray:
    """Analytic Jacobian b_ij = dA_i/deta_j; undefined at eta = 0."""
    eta = np.asarray(eta, dtype=float)
    q, Qeta = _quad(op, eta)
    if np.any(q <= 0):
        raise OperatorError("Jacobian is undefined at eta = 0")
    return _jacobian_from_q(op, q, Qeta)


def regularized_jacobian(op: OperatorSpec, eta, delta: float) -> np.ndarray:
    """Jacobian with |eta| replaced by (|eta|^2 + delta^2)^(1/2) throughout.

    Uniformly elliptic for delta > 0; the rank-one term vanishes at eta = 0.
    """
    if delta <= 0:
        raise OperatorError("delta must be positive")
    eta = np.asarray(eta, dtype=float)
    q, Qeta = _quad(op, eta)
    return _jacobian_from_q(op, q + delta * delta, Qeta)


def _unit_circle(n: int, offset: float = 0.0) -> np.ndarray:
    t = 2 * np.pi * (np.arange(n) + offset) / n
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def check_Mp(op: OperatorSpec, alpha: float | None = None, sample_count: int = 128) -> CheckReport:
    """Sampled verification of the M_p(alpha) structure conditions.

    Conditions: (i) two-sided ellipticity of the Jacobian with constant ``alpha``,
    (ii) (p-1)-homogeneity, (iii) strict monotonicity of A with the empirical
    two-sided constant, (iv) Jacobian continuity with ``op.lambda_cap`` on pairs of
    comparable magnitude.
    """
    if sample_count < 100:
        raise OperatorError("sample_count must be >= 100")
    alpha = op.alpha if alpha is None else alpha
    p = op.p
    radii = 2.0 ** np.arange(-4, 5)
    dirs = _unit_circle(sample_count, 0.25)
    eta = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    nrm = np.linalg.norm(eta, axis=-1)
    xi = _unit_circle(sample_count, 0.5)

    # (i) ellipticity
    b = eval_jacobian(op, eta)
    quad = np.einsum("ki,nij,kj->nk", xi, b, xi) / nrm[:, None] ** (p - 2.0)
    rmax, rmin = quad.max(), quad.min()
    # relative slack of a few ulps absorbs rounding when the bound is attained
    slack = 1e-12 * alpha
    margin_i = min(alpha - rmax, rmin - 1.0 / alpha) + slack
    worst_i = np.unravel_index(np.argmax(np.maximum(quad - alpha, 1.0 / alpha - quad)), quad.shape)
    rep_i = CheckReport(
        "ellipticity", bool(margin_i >= 0), float(margin_i),
        location=eta[worst_i[0]].tolist(),
        metadata={"alpha": alpha, "ratio_max": rmax, "ratio_min": rmin,
                  "alpha_empirical": max(rmax, 1.0 / rmin)},
    )

    # (ii) homogeneity
    A = eval_A(op, eta)
    An = np.linalg.norm(A, axis=-1)
    worst_h = 0.0
    for s in (2.0, 0.5, 3.0):
        err = np.linalg.norm(eval_A(op, s * eta) - s ** (p - 1) * A, axis=-1) / (s ** (p - 1) * An)
        worst_h = max(worst_h, float(err.max()))
    rep_ii = CheckReport("homogeneity", worst_h <= 1e-12, 1e-12 - worst_h,
                         metadata={"max_relative_error": worst_h, "tolerance": 1e-12})

    # (iii) monotonicity, Eq. (1.1) form
    eta2 = (radii[:, None, None] * _unit_circle(16, 0.1)[None]).reshape(-1, 2)
    A2 = eval_A(op, eta2)
    d = eta[:, None, :] - eta2[None, :, :]
    dA = A[:, None, :] - A2[None, :, :]
    inner = np.einsum("abi,abi->ab", dA, d)
    dn2 = np.einsum("abi,abi->ab", d, d)
    distinct = dn2 > 1e-24
    sums = nrm[:, None] + np.linalg.norm(eta2, axis=-1)[None, :]
    ratio = inner[distinct] / (sums[distinct] ** (p - 2.0) * dn2[distinct])
    min_inner = float((inner[distinct] / dn2[distinct]).min())
    c_emp = float(max(ratio.max(), 1.0 / ratio.min())) if ratio.min() > 0 else np.inf
    rep_iii = CheckReport("monotonicity", bool(ratio.min() > 0), float(ratio.min()),
                          metadata={"constant_empirical": c_emp, "min_inner_over_dist2": min_inner})

    # (iv) Jacobian continuity on comparable pairs
    b2 = eval_jacobian(op, eta2)
    n2 = np.linalg.norm(eta2, axis=-1)
    comparable = (nrm[:, None] <= 2 * n2[None, :]) & (n2[None, :] <= 2 * nrm[:, None]) & distinct
    db = np.abs(b[:, None] - b2[None, :]).max(axis=(-1, -2))
    lam_ratio = db / (np.sqrt(dn2) * nrm[:, None] ** (p - 3.0) + 1e-300)
    lam_emp = float(lam_ratio[comparable].max())
    rep_iv = CheckReport("jacobian_continuity", bool(lam_emp <= op.lambda_cap), float(op.lambda_cap - lam_emp),
                         metadata={"lambda": op.lambda_cap, "lambda_empirical": lam_emp})

    children = [rep_i, rep_ii, rep_iii, rep_iv]
    worst = min(c.worst_case for c in children)
    return CheckReport(
        "M_p(alpha) structure",
        all(c.passed for c in children),
        worst,
        location=[c.name for c in children if not c.passed] or None,
        metadata={"p": p, "family": op.family, "alpha": alpha, "sample_count": sample_count},
        children=children,
    )
