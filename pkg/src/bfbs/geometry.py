"""Convex planar bodies as radial graphs about a common center.

A :class:`StarBody` stores radii ``rho[j]`` at the uniform angles
``theta_j = 2 pi j / M``. The boundary is the closed polygon through the
``M`` sample points; every predicate below is evaluated on that polygon.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import ConvexHull, cKDTree

CONVEX_TOL = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StarBody:
    center: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(2)
        r = np.array(self.rho, dtype=float).reshape(-1)
        if r.size < 8:
            raise GeometryError("need at least 8 angular samples")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise GeometryError("radii must be positive and finite")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "rho", r)

    @property
    def M(self) -> int:
        return self.rho.size

    @property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    @property
    def directions(self) -> np.ndarray:
        t = self.theta
        return np.stack([np.cos(t), np.sin(t)], axis=-1)

    @property
    def points(self) -> np.ndarray:
        return self.center + self.rho[:, None] * self.directions

    def edge_lengths(self) -> np.ndarray:
        P = self.points
        return np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)

    def area(self) -> float:
        P = self.points - self.center
        Q = np.roll(P, -1, axis=0)
        return 0.5 * float(np.sum(P[:, 0] * Q[:, 1] - P[:, 1] * Q[:, 0]))

    def scaled(self, s: float) -> "StarBody":
        """Dilation by ``s`` about the center."""
        return StarBody(self.center, s * self.rho)

    def translated(self, v) -> "StarBody":
        return StarBody(self.center + np.asarray(v, dtype=float), self.rho)

    def with_rho(self, rho) -> "StarBody":
        return StarBody(self.center, rho)

    def circumradius(self) -> float:
        return float(self.rho.max())

    def snapshot_hash(self) -> str:
        import hashlib

        h = hashlib.sha1(self.center.tobytes() + self.rho.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class HalfPlane:
    """Closed half-plane ``{x : normal . (x - point) <= 0}``; normal points outward."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(2)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise GeometryError("half-plane normal must be nonzero")
        object.__setattr__(self, "normal", n / nn)
        object.__setattr__(self, "point", np.array(self.point, dtype=float).reshape(2))

    def offset(self, x) -> np.ndarray:
        """Signed distance of x beyond the plane (positive on the cut side)."""
        return (np.asarray(x, dtype=float) - self.point) @ self.normal

    def shifted(self, eps: float) -> "HalfPlane":
        """Parallel plane moved inward by ``eps``."""
        return HalfPlane(self.point - eps * self.normal, self.normal)


# ---------------------------------------------------------------- construction

def _check_M(M: int):
    if M < 64 or M & (M - 1):
        raise GeometryError(f"M must be a power of two >= 64, got {M}")


def disk(r: float, M: int = 256, center=(0.0, 0.0)) -> StarBody:
    if r <= 0:
        raise GeometryError("disk radius must be positive")
    _check_M(M)
    return StarBody(np.asarray(center, dtype=float), np.full(M, float(r)))


def ellipse(a: float, b: float, phi: float = 0.0, M: int = 256, center=(0.0, 0.0)) -> StarBody:
    if a <= 0 or b <= 0:
        raise GeometryError("ellipse semi-axes must be positive")
    _check_M(M)
    t = 2 * np.pi * np.arange(M) / M - phi
    rho = a * b / np.sqrt((b * np.cos(t)) ** 2 + (a * np.sin(t)) ** 2)
    return StarBody(np.asarray(center, dtype=float), rho)


def _polygon_cross(V: np.ndarray) -> np.ndarray:
    e1 = np.roll(V, -1, axis=0) - V
    e0 = V - np.roll(V, 1, axis=0)
    return e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0]


def _dist_to_convex_polygon(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Euclidean distance from points X to a CCW convex polygon V (0 inside)."""
    A = V
    B = np.roll(V, -1, axis=0)
    E = B - A
    rel = X[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("nki,ki->nk", rel, E) / np.einsum("ki,ki->k", E, E), 0, 1)
    d = np.linalg.norm(rel - t[..., None] * E[None], axis=-1).min(axis=1)
    outward = E[:, 1] * 0 + (rel[..., 0] * E[None, :, 1] - rel[..., 1] * E[None, :, 0])
    inside = np.all(outward <= 0, axis=1)
    return np.where(inside, 0.0, d)


def _rounded_radial(V: np.ndarray, r: float, c: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Radial function about c of the set {x : dist(x, V) <= r} by bisection."""
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), np.linalg.norm(V - c, axis=1).max() + 2 * r)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = _dist_to_convex_polygon(c + mid[:, None] * dirs, V) <= r
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def rounded_polygon(vertices, corner_radius: float, M: int = 256) -> StarBody:
    """Convex polygon with corners replaced by circular arcs of radius ``corner_radius``.

    The body is the inward offset of the polygon dilated back by the corner
    radius, so the outer outline keeps the given edges and every boundary point
    is touched by an interior ball of that radius.
    """
    _check_M(M)
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
        raise GeometryError("rounded_polygon needs at least three 2D vertices")
    if corner_radius <= 0:
        raise GeometryError(
            "corner_radius must be > 0: sharp corners violate the interior ball condition"
        )
    cr = _polygon_cross(V)
    if np.all(cr < 0):
        V = V[::-1]
        cr = _polygon_cross(V)
    if not np.all(cr > 0):
        raise GeometryError("rounded_polygon vertices are not in convex order")
    # inward offset: intersect consecutive shifted edge lines
    E = np.roll(V, -1, axis=0) - V
    N = np.stack([E[:, 1], -E[:, 0]], axis=1) / np.linalg.norm(E, axis=1)[:, None]
    P0 = V - corner_radius * N
    inner = []
    for k in range(len(V)):
        a0, d0 = P0[k - 1], E[k - 1]
        a1, d1 = P0[k], E[k]
        mat = np.array([d0, -d1]).T
        s = np.linalg.solve(mat, a1 - a0)
        inner.append(a0 + s[0] * d0)
    inner = np.array(inner)
    E_in = np.roll(inner, -1, axis=0) - inner
    if not (np.all(_polygon_cross(inner) > 0) and np.all(np.einsum("ij,ij->i", E_in, E) > 0)):
        raise GeometryError("corner_radius too large for this polygon")
    # centroid from a fine sampling about the vertex mean
    c0 = inner.mean(axis=0)
    fine = StarBody(c0, _rounded_radial(inner, corner_radius, c0, _dirs(4096)))
    c = _polygon_centroid(fine.points)
    body = StarBody(c, _rounded_radial(inner, corner_radius, c, _dirs(M)))
    return body


def _dirs(M: int) -> np.ndarray:
    t = 2 * np.pi * np.arange(M) / M
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def _polygon_centroid(P: np.ndarray) -> np.ndarray:
    Q = np.roll(P, -1, axis=0)
    cr = P[:, 0] * Q[:, 1] - P[:, 1] * Q[:, 0]
    A = 0.5 * cr.sum()
    cx = ((P[:, 0] + Q[:, 0]) * cr).sum() / (6 * A)
    cy = ((P[:, 1] + Q[:, 1]) * cr).sum() / (6 * A)
    return np.array([cx, cy])


def make_body(shape, M: int = 256) -> StarBody:
    """Build a body from a shape spec tuple.

    ``("disk", r)``, ``("ellipse", a, b, phi)`` or
    ``("rounded_polygon", vertices, corner_radius)``.
    """
    kind, *args = shape
    if kind == "disk":
        return disk(float(args[0]), M)
    if kind == "ellipse":
        a, b = float(args[0]), float(args[1])
        phi = float(args[2]) if len(args) > 2 else 0.0
        return ellipse(a, b, phi, M)
    if kind == "rounded_polygon":
        return rounded_polygon(args[0], float(args[1]), M)
    raise GeometryError(f"unknown shape {kind!r}")


# ---------------------------------------------------------------- predicates

def convexity_margin(body: StarBody) -> tuple[float, int]:
    """Most negative normalized cross product of consecutive edges and its index."""
    P = body.points
    cr = _polygon_cross(P)
    L = body.edge_lengths().mean()
    norm = cr / L**2
    j = int(np.argmin(norm))
    return float(norm[j]), j


def is_convex(body: StarBody, tol: float = CONVEX_TOL) -> bool:
    if tol < 0:
        raise GeometryError("tol must be non-negative")
    return convexity_margin(body)[0] >= -tol


def grid_eps(body: StarBody) -> float:
    """Containment slack attributable to polygonal sampling."""
    return 1e-3 * float(body.edge_lengths().mean())


def _ray_hits(center: np.ndarray, dirs: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Largest ray parameter where rays from center cross the closed polygon V."""
    A = V
    E = np.roll(V, -1, axis=0) - V
    w = A - center
    # solve center + t d = A + s E
    den = dirs[:, None, 0] * E[None, :, 1] - dirs[:, None, 1] * E[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[None, :, 0] * E[None, :, 1] - w[None, :, 1] * E[None, :, 0]) / den
        s = (w[None, :, 0] * dirs[:, None, 1] - w[None, :, 1] * dirs[:, None, 0]) / den
    ok = (np.abs(den) > 1e-300) & (s >= -1e-12) & (s <= 1 + 1e-12) & (t > 0)
    t = np.where(ok, t, -np.inf)
    return t.max(axis=1)


def resample(body: StarBody, center=None, M: int | None = None) -> StarBody:
    """Radial sampling of the same boundary polygon about a new center or resolution."""
    c = body.center if center is None else np.asarray(center, dtype=float)
    M = body.M if M is None else M
    if not _point_in_star(body, c):
        raise GeometryError("new center lies outside the body")
    rho = _ray_hits(c, _dirs(M), body.points)
    if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
        raise GeometryError("body is not star-shaped about the new center")
    return StarBody(c, rho)


def convexify(body: StarBody) -> StarBody:
    """Radial sampling of the convex hull of the boundary samples (same center)."""
    P = body.points
    hull = ConvexHull(P)
    V = P[hull.vertices]  # counter-clockwise
    rho = _ray_hits(body.center, body.directions, V)
    # hull vertices are themselves samples: keep them bit-exact
    rho[hull.vertices] = body.rho[hull.vertices]
    return StarBody(body.center, np.maximum(rho, body.rho))


def _vertex_normals(P: np.ndarray) -> np.ndarray:
    """Outward normal at each vertex: bisector of the adjacent edge normals."""
    e1 = np.roll(P, -1, axis=0) - P
    e0 = P - np.roll(P, 1, axis=0)
    n1 = np.stack([e1[:, 1], -e1[:, 0]], axis=1) / np.linalg.norm(e1, axis=1)[:, None]
    n0 = np.stack([e0[:, 1], -e0[:, 0]], axis=1) / np.linalg.norm(e0, axis=1)[:, None]
    n = n0 + n1
    return n / np.linalg.norm(n, axis=1)[:, None]


def supporting_halfplane(body: StarBody, j: int, tol: float = CONVEX_TOL) -> HalfPlane:
    if not is_convex(body, tol):
        raise GeometryError("supporting half-plane requested for a non-convex body")
    P = body.points
    n = _vertex_normals(P)[j % body.M]
    return HalfPlane(P[j % body.M], n)


def supporting_normals(body: StarBody) -> np.ndarray:
    return _vertex_normals(body.points)


def matched_point(K: StarBody, Omega: StarBody, j: int, margin: float | None = None) -> np.ndarray:
    """Point of the outer boundary furthest along the supporting normal of K at x_j."""
    return Omega.points[matched_index(K, Omega, j, margin)]


def matched_index(K: StarBody, Omega: StarBody, j: int, margin: float | None = None) -> int:
    m = -grid_eps(K) if margin is None else margin
    if not contains(Omega, K, m):
        raise GeometryError("K is not contained in Omega")
    a = supporting_halfplane(K, j).normal
    x = K.points[j % K.M]
    h = (Omega.points - x) @ a
    h = np.where(h > 0, h, -np.inf)
    k = int(np.argmax(h))
    if not np.isfinite(h[k]):
        raise GeometryError("no outer boundary point beyond the supporting plane")
    return k


def intersect(b1: StarBody, b2: StarBody) -> StarBody:
    if b1.M != b2.M:
        raise GeometryError("bodies must share the angular resolution")
    if not np.allclose(b1.center, b2.center, rtol=0, atol=1e-12):
        b2 = resample(b2, b1.center)
    rho = np.minimum(b1.rho, b2.rho)
    if rho.min() <= 0:
        raise GeometryError("intersection has empty interior")
    out = StarBody(b1.center, rho)
    if is_convex(b1) and is_convex(b2) and not is_convex(out):
        out = convexify(out)
    return out


def trim_halfplane(body: StarBody, plane: HalfPlane) -> StarBody:
    """Intersect the body with the closed lower side of ``plane``."""
    h = plane.offset(body.center)
    if h >= 0:
        raise GeometryError("body center lies on the cut side; re-center first")
    dn = body.directions @ plane.normal
    with np.errstate(divide="ignore"):
        t = np.where(dn > 0, -h / np.where(dn > 0, dn, 1.0), np.inf)
    return StarBody(body.center, np.minimum(body.rho, t))


def _point_in_star(body: StarBody, x) -> bool:
    v = np.asarray(x, dtype=float) - body.center
    r = np.hypot(*v)
    if r == 0:
        return True
    return r < _radial_at(body, math.atan2(v[1], v[0]))


def _radial_at(body: StarBody, ang) -> np.ndarray:
    """Radius of the boundary polygon along direction(s) ``ang``."""
    ang = np.atleast_1d(np.asarray(ang, dtype=float)) % (2 * np.pi)
    d = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    M = body.M
    h = 2 * np.pi / M
    j = np.floor(ang / h).astype(int) % M
    P = body.points - body.center
    A, B = P[j], P[(j + 1) % M]
    E = B - A
    den = d[:, 0] * E[:, 1] - d[:, 1] * E[:, 0]
    t = (A[:, 0] * E[:, 1] - A[:, 1] * E[:, 0]) / den
    return t


def signed_clearance(outer: StarBody, X) -> np.ndarray:
    """Distance from points X to the boundary of ``outer``; negative outside."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = outer.points
    E = np.roll(P, -1, axis=0) - P
    rel = X[:, None, :] - P[None]
    t = np.clip(np.einsum("nki,ki->nk", rel, E) / np.einsum("ki,ki->k", E, E), 0, 1)
    d = np.linalg.norm(rel - t[..., None] * E[None], axis=-1).min(axis=1)
    v = X - outer.center
    ang = np.arctan2(v[:, 1], v[:, 0])
    inside = np.hypot(v[:, 0], v[:, 1]) <= _radial_at(outer, ang)
    return np.where(inside, d, -d)


def contains(outer: StarBody, inner: StarBody, margin: float = 0.0) -> bool:
    return bool(signed_clearance(outer, inner.points).min() >= margin)


def min_gap(K: StarBody, Omega: StarBody) -> float:
    """Smallest distance from the boundary of K to the boundary of Omega."""
    return float(signed_clearance(Omega, K.points).min())


def hausdorff_distance(b1: StarBody, b2: StarBody, refine: int = 4) -> float:
    """Symmetric Hausdorff distance between the boundary polylines.

    Each polyline is represented by its vertices plus ``refine - 1`` equally
    spaced points per edge; distances between these finite sets form an exact
    metric and approach the polyline distance as ``refine`` grows.
    """
    A = _densify(b1.points, refine)
    B = _densify(b2.points, refine)
    dab = cKDTree(B).query(A)[0].max()
    dba = cKDTree(A).query(B)[0].max()
    return float(max(dab, dba))


def _densify(P: np.ndarray, k: int) -> np.ndarray:
    if k <= 1:
        return P
    Q = np.roll(P, -1, axis=0)
    f = np.arange(k) / k
    return (P[:, None, :] + f[None, :, None] * (Q - P)[:, None, :]).reshape(-1, 2)


def _circumcenter_normals(P: np.ndarray) -> np.ndarray:
    """Outward normal from the circle through each sample and its two neighbours."""
    A, B, C = np.roll(P, 1, axis=0), P, np.roll(P, -1, axis=0)
    ax, ay = A[:, 0] - B[:, 0], A[:, 1] - B[:, 1]
    cx, cy = C[:, 0] - B[:, 0], C[:, 1] - B[:, 1]
    d = 2 * (ax * cy - ay * cx)
    fallback = _vertex_normals(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (cy * (ax * ax + ay * ay) - ay * (cx * cx + cy * cy)) / d
        uy = (ax * (cx * cx + cy * cy) - cx * (ax * ax + ay * ay)) / d
    n = -np.stack([ux, uy], axis=1)
    nn = np.linalg.norm(n, axis=1)
    ok = np.isfinite(nn) & (nn > 0) & (np.abs(d) > 1e-14 * (ax * ax + ay * ay + cx * cx + cy * cy))
    n = np.where(ok[:, None], n / np.where(ok, nn, 1.0)[:, None], fallback)
    # keep the candidate only if it points outward
    bad = np.einsum("ij,ij->i", n, fallback) <= 0
    n[bad] = fallback[bad]
    return n


def interior_ball_radius(body: StarBody, tol: float = CONVEX_TOL) -> float:
    """Minimum over boundary samples of the largest empty tangent ball.

    At sample x_j a candidate ball has center x_j - delta n, where n is one of
    the outward normals of the polygon at x_j (the two adjacent edge normals,
    their bisector, and the normal of the circle through x_j and its
    neighbours). It is admissible when no boundary sample lies strictly inside
    it; the admissible delta is found by bisection and maximized over the
    candidate normals.
    """
    if not is_convex(body, tol):
        raise GeometryError("interior ball radius requires a convex body")
    P = body.points
    M = body.M
    e1 = np.roll(P, -1, axis=0) - P
    e0 = P - np.roll(P, 1, axis=0)
    n1 = np.stack([e1[:, 1], -e1[:, 0]], axis=1) / np.linalg.norm(e1, axis=1)[:, None]
    n0 = np.stack([e0[:, 1], -e0[:, 0]], axis=1) / np.linalg.norm(e0, axis=1)[:, None]
    candidates = (n0, n1, _vertex_normals(P), _circumcenter_normals(P))
    others = ~np.eye(M, dtype=bool)
    best = np.zeros(M)
    for n in candidates:
        lo = np.zeros(M)
        hi = np.full(M, 2.0 * body.rho.max())
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            z = P - mid[:, None] * n
            d = np.linalg.norm(z[:, None, :] - P[None, :, :], axis=-1)
            d = np.where(others, d, np.inf).min(axis=1)
            ok = d >= mid * (1 - 1e-13)
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        best = np.maximum(best, lo)
    return float(best.min())


def rotate(body: StarBody, phi: float) -> StarBody:
    """Body rotated by ``phi`` about its center (periodic spline in angle)."""
    M = body.M
    shift = phi / (2 * np.pi / M)
    k = round(shift)
    if abs(shift - k) < 1e-12:
        return StarBody(body.center, np.roll(body.rho, k))
    t = np.append(body.theta, 2 * np.pi)
    spl = CubicSpline(t, np.append(body.rho, body.rho[0]), bc_type="periodic")
    return StarBody(body.center, spl((body.theta - phi) % (2 * np.pi)))


def write_boundary_csv(body: StarBody, path) -> None:
    P = body.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "theta", "rho", "x", "y"])
        for j in range(body.M):
            w.writerow([j] + [f"{v:.12g}" for v in (body.theta[j], body.rho[j], P[j, 0], P[j, 1])])


def read_boundary_csv(path) -> StarBody:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rho = np.array([float(r["rho"]) for r in rows])
    x0 = np.array([float(rows[0]["x"]), float(rows[0]["y"])])
    th0 = float(rows[0]["theta"])
    center = x0 - rho[0] * np.array([math.cos(th0), math.sin(th0)])
    return StarBody(center, rho)
