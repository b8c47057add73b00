"""Drone Toric Space: safe camera surfaces around one or two targets.

For two targets A, B and a subtended angle alpha, camera positions seeing
the pair under alpha form a spindle torus of radius r = AB / (2 sin alpha).
The torus passes through the targets themselves, so the regions closer than
a safety distance d_S are replaced by sphere or plane caps chosen tangent to
both the remaining toric surface and the safety sphere of the replaced
target. The composite stays C1 across the seams.

The surface is charted by (phi, theta) in [-1, 1]^2:

* |theta| is the normalized arc length along the horizontal cross-section
  curve, measured from the axis point behind B (theta = 0) to the axis
  point behind A (theta = +/-1, where the seam closes).
* phi moves along the vertical meridian circle: 0 at the targets' height,
  +1 straight above, -1 straight below. The sign of theta selects the side
  of the vertical plane through the targets, and the two sheets meet at
  phi = +/-1, which is what lets search curves cross the 180 degree line.

Cross-section pieces live in a local (x, h) half-plane: x along the A->B
axis with A at 0, h >= 0 the distance from the axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import Z_UP, unit

TWO_TARGET_ALPHA_MAX = np.pi / 2  # obtuse angles admit no C1 cap family here


class SurfaceType(enum.Enum):
    TYPE1 = 1
    TYPE2 = 2
    TYPE3 = 3
    SINGLE_SPHERE = 4


@dataclass
class Target:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ident: str = ""

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)

    @property
    def yaw(self) -> float:
        return float(self.orientation[2])

    @property
    def forward(self) -> np.ndarray:
        # forward at yaw 0 is +y, matching the camera frame convention
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([-s, c, 0.0])


def toric_radius(alpha: float, ab: float) -> float:
    """Radius of the toric circle through both targets, AB / (2 sin alpha)."""
    if not 0.0 < alpha < np.pi:
        raise ValueError("alpha must lie in (0, pi)")
    if ab <= 0.0:
        raise ValueError("targets must be distinct")
    return ab / (2.0 * np.sin(alpha))


def classify_surface(r: float, ab: float, d_s: float, tol: float | None = None) -> SurfaceType:
    """Surface type from the safety distance against r - AB/2."""
    if tol is None:
        tol = 1e-9 * r
    edge = r - ab / 2.0
    if abs(d_s - edge) <= tol:
        return SurfaceType.TYPE3
    return SurfaceType.TYPE1 if d_s < edge else SurfaceType.TYPE2


# ---------------------------------------------------------------------------
# Cross-section pieces


@dataclass
class ArcPiece:
    cx: float  # arc center abscissa
    ch: float  # arc center height (0 for caps, k for the toric band)
    radius: float
    ang0: float
    ang1: float  # param runs linearly ang0 -> ang1; sweep may be negative

    @property
    def length(self) -> float:
        return self.radius * abs(self.ang1 - self.ang0)

    def point(self, t: float) -> tuple[float, float]:
        a = self.ang0 + t * (self.ang1 - self.ang0)
        return self.cx + self.radius * np.cos(a), self.ch + self.radius * np.sin(a)

    def endpoint(self, which: int) -> tuple[float, float]:
        return self.point(0.0 if which == 0 else 1.0)


@dataclass
class SegPiece:
    x: float
    h0: float
    h1: float

    @property
    def length(self) -> float:
        return abs(self.h1 - self.h0)

    def point(self, t: float) -> tuple[float, float]:
        return self.x, self.h0 + t * (self.h1 - self.h0)

    def endpoint(self, which: int) -> tuple[float, float]:
        return self.point(0.0 if which == 0 else 1.0)


def _solve_cap_type1(r: float, length: float, sin_a: float, d_s: float):
    """Concave cap behind a target: externally tangent to the toric circle.

    Center abscissa -(r^2 - delta^2) / (2 (delta - r sin alpha)) with
    delta = r - d_s; the radius is |center| - d_s so the sphere touches the
    safety sphere at the axis point d_s behind the target.
    """
    delta = r - d_s
    c = -(r * r - delta * delta) / (2.0 * (delta - r * sin_a))
    radius = -c - d_s
    return c, radius


def _solve_cap_type2(r: float, length: float, d_s: float):
    """Convex cap: toric circle internally tangent, safety sphere inside.

    Derived from |C - O_t| = R - r with R = c + d_s; the abscissa printed
    in the source formula fails the tangency check, this one satisfies it
    and has the same Type-3 limit (|c| -> inf as d_s -> r - AB/2).
    """
    u = d_s - r
    c = (r * r - u * u) / (length + 2.0 * u)
    radius = c + d_s
    return c, radius


@dataclass
class DTSSurface:
    """Composite safe surface with its chart frame and cross-section pieces."""

    targets: list[Target]
    alpha: float
    d_s: float
    surface_type: SurfaceType
    r: float
    origin: np.ndarray
    ex: np.ndarray  # along A -> B (or the single target's forward)
    ey: np.ndarray  # horizontal, theta > 0 side
    ez: np.ndarray  # up component orthogonal to ex
    pieces: list
    piece_offsets: np.ndarray  # cumulative arc length at piece starts
    total_length: float
    seam_fractions: tuple[float, ...]  # s values at interior piece joints
    degenerate: bool = False
    axis_vertical: bool = False

    # -- chart ------------------------------------------------------------

    def _cross_section(self, s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), 1.0)
        target = s * self.total_length
        for i, piece in enumerate(self.pieces):
            end = self.piece_offsets[i] + piece.length
            if target <= end + 1e-15 or i == len(self.pieces) - 1:
                t = 0.0 if piece.length == 0 else (target - self.piece_offsets[i]) / piece.length
                return piece.point(min(max(t, 0.0), 1.0))
        raise AssertionError("unreachable")

    @staticmethod
    def _beta(phi: float, theta: float) -> float:
        if theta >= 0.0:
            return phi * (np.pi / 2.0)
        beta = np.pi - phi * (np.pi / 2.0)
        if beta > np.pi:
            beta -= 2.0 * np.pi
        return beta

    def dts_to_world(self, phi: float, theta: float) -> np.ndarray:
        """World position of chart point (phi, theta)."""
        x, h = self._cross_section(abs(theta))
        beta = self._beta(phi, theta)
        return self.origin + x * self.ex + h * (np.cos(beta) * self.ey + np.sin(beta) * self.ez)

    def dts_to_world_batch(self, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        theta = np.asarray(theta, dtype=float)
        s = np.clip(np.abs(theta), 0.0, 1.0)
        target = s * self.total_length
        x = np.empty_like(s)
        h = np.empty_like(s)
        lo = 0.0
        for i, piece in enumerate(self.pieces):
            hi = self.piece_offsets[i] + piece.length
            if i == len(self.pieces) - 1:
                mask = target >= lo - 1e-15
            else:
                mask = (target >= lo - 1e-15) & (target <= hi + 1e-15)
            if np.any(mask):
                t = np.zeros(np.count_nonzero(mask)) if piece.length == 0 else np.clip(
                    (target[mask] - self.piece_offsets[i]) / piece.length, 0.0, 1.0
                )
                if isinstance(piece, ArcPiece):
                    a = piece.ang0 + t * (piece.ang1 - piece.ang0)
                    x[mask] = piece.cx + piece.radius * np.cos(a)
                    h[mask] = piece.ch + piece.radius * np.sin(a)
                else:
                    x[mask] = piece.x
                    h[mask] = piece.h0 + t * (piece.h1 - piece.h0)
            lo = hi
        beta = np.where(theta >= 0.0, phi * (np.pi / 2.0), np.pi - phi * (np.pi / 2.0))
        beta = np.where(beta > np.pi, beta - 2.0 * np.pi, beta)
        dir_h = np.cos(beta)[:, None] * self.ey + np.sin(beta)[:, None] * self.ez
        return self.origin + x[:, None] * self.ex + h[:, None] * dir_h

    def world_to_dts(self, point: np.ndarray) -> tuple[float, float]:
        """Chart parameters of the radial projection of `point` onto the surface."""
        rel = np.asarray(point, dtype=float) - self.origin
        x = float(np.dot(rel, self.ex))
        perp = rel - x * self.ex
        h = float(np.linalg.norm(perp))
        if h < 1e-12:
            side, phi = 1.0, 0.0
        else:
            beta = float(np.arctan2(np.dot(perp, self.ez), np.dot(perp, self.ey)))
            if abs(beta) <= np.pi / 2.0:
                side = 1.0
                phi = beta / (np.pi / 2.0)
            else:
                side = -1.0
                phi = np.sign(beta) * (np.pi - abs(beta)) / (np.pi / 2.0)
        best = None
        for i, piece in enumerate(self.pieces):
            if isinstance(piece, ArcPiece):
                dx, dh = x - piece.cx, h - piece.ch
                rad = float(np.hypot(dx, dh))
                if rad < 1e-12:
                    raise ValueError("point coincides with a projection center")
                ang = float(np.arctan2(dh, dx))
                lo, hi = sorted((piece.ang0, piece.ang1))
                # normalize into [lo, lo + 2 pi) before clamping
                while ang < lo:
                    ang += 2.0 * np.pi
                while ang >= lo + 2.0 * np.pi:
                    ang -= 2.0 * np.pi
                ang_cl = min(max(ang, lo), hi)
                px = piece.cx + piece.radius * np.cos(ang_cl)
                ph = piece.ch + piece.radius * np.sin(ang_cl)
                t = 0.0 if piece.length == 0 else abs(ang_cl - piece.ang0) / abs(piece.ang1 - piece.ang0)
            else:
                lo_h, hi_h = sorted((piece.h0, piece.h1))
                ph = min(max(h, lo_h), hi_h)
                px = piece.x
                t = 0.0 if piece.length == 0 else (ph - piece.h0) / (piece.h1 - piece.h0)
            d = float(np.hypot(px - x, ph - h))
            if best is None or d < best[0]:
                best = (d, i, t)
        _, i, t = best
        piece = self.pieces[i]
        s = (self.piece_offsets[i] + t * piece.length) / self.total_length
        return phi, side * s

    # -- diagnostics --------------------------------------------------------

    def cap_descriptors(self) -> dict:
        """Per-end cap description in world coordinates."""
        out = {}
        if self.surface_type == SurfaceType.SINGLE_SPHERE:
            return out
        for name, piece in (("B", self.pieces[0]), ("A", self.pieces[-1])):
            if isinstance(piece, ArcPiece):
                out[name] = {
                    "kind": "sphere",
                    "center": self.origin + piece.cx * self.ex,
                    "radius": piece.radius,
                }
            else:
                out[name] = {
                    "kind": "plane",
                    "point": self.origin + piece.x * self.ex,
                    "normal": self.ex.copy(),
                }
        return out

    def min_target_distance(self) -> float:
        """Exact minimum distance from the surface to either target."""
        length = float(np.linalg.norm(self.targets[-1].position - self.targets[0].position)) if len(self.targets) == 2 else 0.0
        targets_x = [0.0, length] if len(self.targets) == 2 else [0.0]
        best = np.inf
        for piece in self.pieces:
            for tx in targets_x:
                if isinstance(piece, ArcPiece):
                    dx, dh = piece.cx - tx, piece.ch
                    lo, hi = sorted((piece.ang0, piece.ang1))
                    cands = [lo, hi]
                    # interior candidate: point of the circle nearest the target
                    a_min = np.arctan2(dh, dx) + np.pi
                    for shift in (-2.0 * np.pi, 0.0, 2.0 * np.pi):
                        if lo <= a_min + shift <= hi:
                            cands.append(a_min + shift)
                    for a in cands:
                        dax = dx + piece.radius * np.cos(a)
                        dah = dh + piece.radius * np.sin(a)
                        best = min(best, float(np.hypot(dax, dah)))
                else:
                    h0 = min(abs(piece.h0), abs(piece.h1))
                    best = min(best, float(np.hypot(piece.x - tx, h0)))
        return float(best)


def _surface_frame(origin: np.ndarray, axis: np.ndarray):
    ex = unit(axis)
    zproj = Z_UP - np.dot(Z_UP, ex) * ex
    vertical = bool(np.linalg.norm(zproj) < 1e-9)
    if vertical:
        fallback = np.array([0.0, 1.0, 0.0])
        zproj = fallback - np.dot(fallback, ex) * ex
    ez = unit(zproj)
    ey = np.cross(ez, ex)
    return ex, ey, ez, vertical


def build_surface(targets: list[Target], alpha: float, d_s: float) -> DTSSurface:
    """Construct the composite safe surface for one or two targets.

    For a single target `alpha` is the viewing distance and the surface is
    the sphere of radius max(alpha, d_s) around it, charted from the
    target's facing direction.
    """
    if d_s <= 0.0:
        raise ValueError("d_s must be positive")
    if len(targets) == 1:
        tgt = targets[0]
        radius = max(alpha, d_s)
        ex, ey, ez, vertical = _surface_frame(tgt.position, tgt.forward)
        piece = ArcPiece(cx=0.0, ch=0.0, radius=radius, ang0=0.0, ang1=np.pi)
        return DTSSurface(
            targets=list(targets),
            alpha=alpha,
            d_s=d_s,
            surface_type=SurfaceType.SINGLE_SPHERE,
            r=radius,
            origin=tgt.position.copy(),
            ex=ex,
            ey=ey,
            ez=ez,
            pieces=[piece],
            piece_offsets=np.array([0.0]),
            total_length=piece.length,
            seam_fractions=(),
            axis_vertical=vertical,
        )
    if len(targets) != 2:
        raise ValueError("surface takes one or two targets")
    a, b = targets
    ab = b.position - a.position
    length = float(np.linalg.norm(ab))
    if length < 1e-9:
        raise ValueError("targets must be distinct")
    if not 0.0 < alpha < TWO_TARGET_ALPHA_MAX:
        raise ValueError("two-target surfaces require 0 < alpha < pi/2")
    r = toric_radius(alpha, length)
    k = r * np.cos(alpha)
    stype = classify_surface(r, length, d_s)
    sin_a = np.sin(alpha)
    degenerate = False

    if stype == SurfaceType.TYPE3:
        seam_h = k
        pieces = [
            SegPiece(x=length + d_s, h0=0.0, h1=seam_h),
            ArcPiece(cx=length / 2.0, ch=k, radius=r, ang0=0.0, ang1=np.pi),
            SegPiece(x=-d_s, h0=seam_h, h1=0.0),
        ]
    else:
        if stype == SurfaceType.TYPE1:
            c, cap_r = _solve_cap_type1(r, length, sin_a, d_s)
            to_cap = np.array([c - length / 2.0, -k])
            seam = np.array([length / 2.0, k]) + r * to_cap / np.linalg.norm(to_cap)
        else:
            c, cap_r = _solve_cap_type2(r, length, d_s)
            to_center = np.array([length / 2.0 - c, k])
            seam = np.array([c, 0.0]) + cap_r * to_center / np.linalg.norm(to_center)
        if seam[1] <= 1e-12 or cap_r <= 0.0:
            raise ValueError("cap construction degenerates for these parameters")
        ang_seam = float(np.arctan2(seam[1], seam[0] - c))
        gamma_a = float(np.arctan2(seam[1] - k, seam[0] - length / 2.0))
        gamma_b = float(np.arctan2(seam[1] - k, (length - seam[0]) - length / 2.0))
        if gamma_a < gamma_b:
            gamma_a += 2.0 * np.pi
        if not gamma_b < np.pi / 2.0 < gamma_a:
            # caps overlap before reaching the band (deep type 2); drop the
            # band and join the two caps where they intersect, above x = L/2.
            # The joint is C0 only, but every kept point stays d_s clear.
            degenerate = True
            if c <= 0.0:
                raise ValueError("safety distance too large for these targets")
            h_joint_sq = cap_r**2 - (length / 2.0 - c) ** 2
            if h_joint_sq <= 1e-12:
                raise ValueError("cap spheres do not intersect; no safe closure")
            h_joint = float(np.sqrt(h_joint_sq))
            ang_joint = float(np.arctan2(h_joint, length / 2.0 - c))
            pieces = [
                ArcPiece(cx=length - c, ch=0.0, radius=cap_r, ang0=0.0, ang1=np.pi - ang_joint),
                ArcPiece(cx=c, ch=0.0, radius=cap_r, ang0=ang_joint, ang1=np.pi),
            ]
        elif stype == SurfaceType.TYPE1:
            pieces = [
                ArcPiece(cx=length - c, ch=0.0, radius=cap_r, ang0=np.pi, ang1=np.pi - ang_seam),
                ArcPiece(cx=length / 2.0, ch=k, radius=r, ang0=gamma_b, ang1=gamma_a),
                ArcPiece(cx=c, ch=0.0, radius=cap_r, ang0=ang_seam, ang1=0.0),
            ]
        else:
            pieces = [
                ArcPiece(cx=length - c, ch=0.0, radius=cap_r, ang0=0.0, ang1=np.pi - ang_seam),
                ArcPiece(cx=length / 2.0, ch=k, radius=r, ang0=gamma_b, ang1=gamma_a),
                ArcPiece(cx=c, ch=0.0, radius=cap_r, ang0=ang_seam, ang1=np.pi),
            ]

    offsets = np.concatenate([[0.0], np.cumsum([p.length for p in pieces])])
    total = float(offsets[-1])
    seam_fractions = tuple(float(offsets[i]) / total for i in range(1, len(pieces)))
    ex, ey, ez, vertical = _surface_frame(a.position, ab)
    surface = DTSSurface(
        targets=list(targets),
        alpha=alpha,
        d_s=d_s,
        surface_type=stype,
        r=r,
        origin=a.position.copy(),
        ex=ex,
        ey=ey,
        ez=ez,
        pieces=pieces,
        piece_offsets=offsets[:-1],
        total_length=total,
        seam_fractions=seam_fractions,
        degenerate=degenerate,
        axis_vertical=vertical,
    )
    if surface.min_target_distance() < d_s - 1e-9:
        raise ValueError("constructed surface violates the safety margin")
    return surface


# ---------------------------------------------------------------------------
# Camera regions


class RegionLabel(enum.Enum):
    EXTERNAL_B = "external-b"
    EXTERNAL_APEX_B = "external-apex-b"
    APEX = "apex"
    EXTERNAL_APEX_A = "external-apex-a"
    EXTERNAL_A = "external-a"


@dataclass(frozen=True)
class CameraRegion:
    label: RegionLabel
    lo: float  # |theta| interval
    hi: float


_REGIONS = (
    CameraRegion(RegionLabel.EXTERNAL_B, 0.0, 0.25),
    CameraRegion(RegionLabel.EXTERNAL_APEX_B, 0.25, 0.375),
    CameraRegion(RegionLabel.APEX, 0.375, 0.625),
    CameraRegion(RegionLabel.EXTERNAL_APEX_A, 0.625, 0.75),
    CameraRegion(RegionLabel.EXTERNAL_A, 0.75, 1.0),
)


def camera_region(theta: float) -> CameraRegion:
    """Region label for |theta|; symmetric under theta -> -theta."""
    a = abs(theta)
    if a > 1.0:
        raise ValueError("theta outside [-1, 1]")
    for region in _REGIONS:
        if region.lo <= a < region.hi:
            return region
    return _REGIONS[-1]


def region_by_label(label: RegionLabel) -> CameraRegion:
    for region in _REGIONS:
        if region.label == label:
            return region
    raise KeyError(label)


# ---------------------------------------------------------------------------
# Batched chart for the planner metric


def subtended_alpha(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    va = a - points
    vb = b - points
    na = np.linalg.norm(va, axis=1)
    nb = np.linalg.norm(vb, axis=1)
    dot = np.einsum("ij,ij->i", va, vb)
    cos = np.clip(dot / np.maximum(na * nb, 1e-300), -1.0, 1.0)
    return np.arccos(cos)


def dts_coords_batch(
    a: np.ndarray, b: np.ndarray, d_s: float, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(alpha, phi, theta, unsafe) for every point, vectorized.

    Each point lies on the toric surface of its own subtended angle; its
    chart follows the composite construction when the caps are valid and
    falls back to the raw toric arc otherwise (near-right angles and
    overlapping-cap regimes). Points within d_s of a target are flagged.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    length = float(np.linalg.norm(b - a))
    ex, ey, ez, _ = _surface_frame(a, b - a)
    rel = points - a
    x = rel @ ex
    perp = rel - x[:, None] * ex
    h = np.linalg.norm(perp, axis=1)
    alpha = subtended_alpha(points, a, b)
    d_a = np.linalg.norm(points - a, axis=1)
    d_b = np.linalg.norm(points - b, axis=1)
    unsafe = (d_a < d_s) | (d_b < d_s)

    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.arctan2(perp @ ez, perp @ ey)
    beta = np.where(h < 1e-12, 0.0, beta)
    pos_side = np.abs(beta) <= np.pi / 2.0
    phi = np.where(pos_side, beta / (np.pi / 2.0), np.sign(beta) * (np.pi - np.abs(beta)) / (np.pi / 2.0))
    side = np.where(pos_side, 1.0, -1.0)

    sin_a = np.sin(alpha)
    r = length / np.maximum(2.0 * sin_a, 1e-12)
    k = r * np.cos(alpha)
    gamma = np.arctan2(h - k, x - length / 2.0)

    s = np.empty(n)
    composite = alpha < (np.pi / 2.0 - 0.05)

    # raw arc chart: angle fraction from B's spindle point to A's
    gb0 = np.arctan2(-k, length / 2.0)
    ga0 = np.pi - gb0
    span = ga0 - gb0
    g_norm = gamma.copy()
    g_norm = np.where(g_norm < gb0, g_norm + 2.0 * np.pi, g_norm)
    s_raw = np.clip((g_norm - gb0) / np.maximum(span, 1e-12), 0.0, 1.0)
    s[:] = s_raw

    idx = np.flatnonzero(composite)
    if idx.size:
        ri, ki, sini, ai = r[idx], k[idx], sin_a[idx], alpha[idx]
        edge = ri - length / 2.0
        type1 = d_s < edge
        delta = ri - d_s
        u = d_s - ri
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = -(ri * ri - delta * delta) / (2.0 * (delta - ri * sini))
            c2 = (ri * ri - u * u) / (length + 2.0 * u)
        c = np.where(type1, c1, c2)
        cap_r = np.where(type1, -c - d_s, c + d_s)
        # seam on the toric circle
        vx = np.where(type1, c - length / 2.0, length / 2.0 - c)
        vy = np.where(type1, -ki, ki)
        nv = np.hypot(vx, vy)
        seam_x = np.where(type1, length / 2.0 + ri * vx / nv, c + cap_r * vx / nv)
        seam_h = np.where(type1, ki + ri * vy / nv, cap_r * vy / nv)
        valid = (seam_h > 1e-12) & (cap_r > 0.0)
        gamma_a = np.arctan2(seam_h - ki, seam_x - length / 2.0)
        gamma_b = np.arctan2(seam_h - ki, length / 2.0 - seam_x)
        gamma_a = np.where(gamma_a < gamma_b, gamma_a + 2.0 * np.pi, gamma_a)
        valid &= (gamma_b < np.pi / 2.0) & (np.pi / 2.0 < gamma_a)

        ang_seam = np.arctan2(seam_h, seam_x - c)
        cap_sweep = np.where(type1, ang_seam, np.pi - ang_seam)
        len_cap = cap_r * cap_sweep
        len_tor = ri * (gamma_a - gamma_b)
        total = 2.0 * len_cap + len_tor
        xi, hi_ = x[idx], h[idx]

        # candidate on the toric band: clamp the angle about the band center
        g_mid = 0.5 * (gamma_a + gamma_b)
        g = gamma[idx] - g_mid
        g = (g + np.pi) % (2.0 * np.pi) - np.pi
        g_cl = np.clip(g + g_mid, gamma_b, gamma_a)
        bx = length / 2.0 + ri * np.cos(g_cl)
        bh = ki + ri * np.sin(g_cl)
        d_band = np.hypot(bx - xi, bh - hi_)
        s_band = (len_cap + ri * (g_cl - gamma_b)) / total

        # candidate on the A cap (radial projection from its center)
        ang_a = np.arctan2(hi_, xi - c)
        ang_a_cl = np.where(type1, np.clip(ang_a, 0.0, ang_seam), np.clip(ang_a, ang_seam, np.pi))
        ax = c + cap_r * np.cos(ang_a_cl)
        ah = cap_r * np.sin(ang_a_cl)
        d_a_cap = np.hypot(ax - xi, ah - hi_)
        t_a = np.where(type1, ang_seam - ang_a_cl, ang_a_cl - ang_seam) / np.maximum(cap_sweep, 1e-12)
        s_cap_a = (len_cap + len_tor + t_a * len_cap) / total

        # candidate on the B cap (mirrored center)
        ang_b = np.arctan2(hi_, xi - (length - c))
        ang_b_cl = np.where(type1, np.clip(ang_b, np.pi - ang_seam, np.pi), np.clip(ang_b, 0.0, np.pi - ang_seam))
        bx2 = (length - c) + cap_r * np.cos(ang_b_cl)
        bh2 = cap_r * np.sin(ang_b_cl)
        d_b_cap = np.hypot(bx2 - xi, bh2 - hi_)
        t_b = np.where(type1, np.pi - ang_b_cl, ang_b_cl) / np.maximum(cap_sweep, 1e-12)
        s_cap_b = t_b * len_cap / total

        dists = np.stack([d_b_cap, d_band, d_a_cap])
        svals = np.stack([s_cap_b, s_band, s_cap_a])
        pick = np.argmin(dists, axis=0)
        s_comp = np.take_along_axis(svals, pick[None, :], axis=0)[0]
        s[idx] = np.where(valid, np.clip(s_comp, 0.0, 1.0), s[idx])

    theta = side * s
    return alpha, phi, theta, unsafe
