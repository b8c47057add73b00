"""Shared 3D primitives: vectors, obstacles, ray tests, camera frustum.

Everything works on plain float64 numpy arrays of shape (3,) unless a
function explicitly takes batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_UP = np.array([0.0, 0.0, 1.0])


def unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


def norm(v: np.ndarray) -> float:
    return float(np.linalg.norm(v))


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def signed_angle_about(axis: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Directed angle from a to b measured around axis (right-hand rule).

    a and b are projected onto the plane orthogonal to axis first.
    """
    ax = unit(axis)
    ap = a - np.dot(a, ax) * ax
    bp = b - np.dot(b, ax) * ax
    na, nb = np.linalg.norm(ap), np.linalg.norm(bp)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("vector parallel to axis has no projected direction")
    ap /= na
    bp /= nb
    s = float(np.dot(ax, np.cross(ap, bp)))
    c = float(np.dot(ap, bp))
    return float(np.arctan2(s, c))


def rot_z(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, p: np.ndarray, margin: float = 0.0) -> bool:
        return bool(np.all(p >= self.lo + margin) and np.all(p <= self.hi - margin))

    def clearance_inside(self, p: np.ndarray) -> float:
        """Distance from an interior point to the nearest face (negative outside)."""
        return float(min(np.min(p - self.lo), np.min(self.hi - p)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


# ---------------------------------------------------------------------------
# Obstacle primitives


@dataclass
class SphereObstacle:
    center: np.ndarray
    radius: float

    def distance(self, p: np.ndarray) -> float:
        return float(np.linalg.norm(p - self.center)) - self.radius


@dataclass
class BoxObstacle:
    lo: np.ndarray
    hi: np.ndarray

    def distance(self, p: np.ndarray) -> float:
        d = np.maximum(np.maximum(self.lo - p, 0.0), p - self.hi)
        return float(np.linalg.norm(d))


@dataclass
class TriangleObstacle:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def distance(self, p: np.ndarray) -> float:
        return _point_triangle_distance(p, self.a, self.b, self.c)


Primitive = SphereObstacle | BoxObstacle | TriangleObstacle


def _point_triangle_distance(p, a, b, c) -> float:
    # Ericson, Real-Time Collision Detection, closest point on triangle.
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = np.dot(ab, ap), np.dot(ac, ap)
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3, d4 = np.dot(ab, bp), np.dot(ac, bp)
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + v * ab)))
    cp = p - c
    d5, d6 = np.dot(ab, cp), np.dot(ac, cp)
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + w * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + ab * v + ac * w)))


def segment_hits_sphere(p0, p1, center, radius) -> bool:
    d = p1 - p0
    f = p0 - center
    a = float(np.dot(d, d))
    if a < 1e-18:
        return float(np.linalg.norm(f)) <= radius
    b = 2.0 * float(np.dot(f, d))
    c = float(np.dot(f, f)) - radius * radius
    disc = b * b - 4 * a * c
    if disc < 0:
        return False
    sq = np.sqrt(disc)
    t1 = (-b - sq) / (2 * a)
    t2 = (-b + sq) / (2 * a)
    return bool(t1 <= 1.0 and t2 >= 0.0)


def segment_hits_box(p0, p1, lo, hi) -> bool:
    d = p1 - p0
    tmin, tmax = 0.0, 1.0
    for k in range(3):
        if abs(d[k]) < 1e-15:
            if p0[k] < lo[k] or p0[k] > hi[k]:
                return False
        else:
            inv = 1.0 / d[k]
            t1 = (lo[k] - p0[k]) * inv
            t2 = (hi[k] - p0[k]) * inv
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


def segment_hits_triangle(p0, p1, a, b, c) -> bool:
    # Moller-Trumbore restricted to the segment parameter range.
    eps = 1e-12
    d = p1 - p0
    e1, e2 = b - a, c - a
    h = np.cross(d, e1 * 0 + e1)  # keep numpy happy on views
    h = np.cross(d, e2)
    det = np.dot(e1, h)
    if abs(det) < eps:
        return False
    inv = 1.0 / det
    s = p0 - a
    u = np.dot(s, h) * inv
    if u < 0 or u > 1:
        return False
    q = np.cross(s, e1)
    v = np.dot(d, q) * inv
    if v < 0 or u + v > 1:
        return False
    t = np.dot(e2, q) * inv
    return bool(0.0 <= t <= 1.0)


def segment_blocked(p0, p1, primitives) -> bool:
    for prim in primitives:
        if isinstance(prim, SphereObstacle):
            if segment_hits_sphere(p0, p1, prim.center, prim.radius):
                return True
        elif isinstance(prim, BoxObstacle):
            if segment_hits_box(p0, p1, prim.lo, prim.hi):
                return True
        else:
            if segment_hits_triangle(p0, p1, prim.a, prim.b, prim.c):
                return True
    return False


def segments_blocked_batch(p0: np.ndarray, p1: np.ndarray, primitives) -> np.ndarray:
    """Vectorized occlusion test for N segments against all primitives.

    p0, p1: (N, 3). Returns a bool array of shape (N,).
    """
    n = p0.shape[0]
    hit = np.zeros(n, dtype=bool)
    d = p1 - p0
    for prim in primitives:
        if isinstance(prim, SphereObstacle):
            f = p0 - prim.center
            a = np.einsum("ij,ij->i", d, d)
            b = 2.0 * np.einsum("ij,ij->i", f, d)
            c = np.einsum("ij,ij->i", f, f) - prim.radius**2
            disc = b * b - 4 * a * c
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-b - sq) / (2 * a)
                t2 = (-b + sq) / (2 * a)
            degenerate = a < 1e-18
            inside = c <= 0
            hit |= ok & ~degenerate & (t1 <= 1.0) & (t2 >= 0.0)
            hit |= degenerate & inside
        elif isinstance(prim, BoxObstacle):
            tmin = np.zeros(n)
            tmax = np.ones(n)
            miss = np.zeros(n, dtype=bool)
            for k in range(3):
                dk = d[:, k]
                pk = p0[:, k]
                par = np.abs(dk) < 1e-15
                miss |= par & ((pk < prim.lo[k]) | (pk > prim.hi[k]))
                with np.errstate(divide="ignore", invalid="ignore"):
                    inv = np.where(par, 0.0, 1.0 / np.where(par, 1.0, dk))
                t1 = (prim.lo[k] - pk) * inv
                t2 = (prim.hi[k] - pk) * inv
                t_lo = np.minimum(t1, t2)
                t_hi = np.maximum(t1, t2)
                tmin = np.where(par, tmin, np.maximum(tmin, t_lo))
                tmax = np.where(par, tmax, np.minimum(tmax, t_hi))
            hit |= ~miss & (tmin <= tmax)
        else:
            for i in range(n):
                if not hit[i] and segment_hits_triangle(p0[i], p1[i], prim.a, prim.b, prim.c):
                    hit[i] = True
    return hit


def clearance(p: np.ndarray, primitives, bounds: Aabb | None = None) -> float:
    """Distance to the nearest obstacle surface or bounds wall."""
    best = np.inf
    if bounds is not None:
        best = bounds.clearance_inside(p)
    for prim in primitives:
        best = min(best, prim.distance(p))
    return float(best)


# ---------------------------------------------------------------------------
# Camera frustum


@dataclass
class Frustum:
    """View frustum as apex + orthonormal camera frame + half-angle tangents."""

    apex: np.ndarray
    forward: np.ndarray
    right: np.ndarray
    up: np.ndarray
    tan_h: float
    tan_v: float
    near: float = 0.0
    far: float = np.inf

    def contains(self, p: np.ndarray) -> bool:
        v = p - self.apex
        depth = float(np.dot(v, self.forward))
        if depth <= self.near or depth > self.far:
            return False
        x = float(np.dot(v, self.right))
        z = float(np.dot(v, self.up))
        return abs(x) <= depth * self.tan_h and abs(z) <= depth * self.tan_v

    def contains_batch(self, pts: np.ndarray) -> np.ndarray:
        v = pts - self.apex
        depth = v @ self.forward
        x = v @ self.right
        z = v @ self.up
        return (
            (depth > self.near)
            & (depth <= self.far)
            & (np.abs(x) <= depth * self.tan_h)
            & (np.abs(z) <= depth * self.tan_v)
        )


@dataclass
class SceneModel:
    """Static collision world: bounds plus a list of primitives."""

    bounds: Aabb
    primitives: list = field(default_factory=list)

    def clearance(self, p: np.ndarray) -> float:
        return clearance(p, self.primitives, self.bounds)
