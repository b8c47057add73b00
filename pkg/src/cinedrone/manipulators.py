"""Through-the-lens viewpoint edits on safe camera surfaces.

Gestures move the camera in the surface chart (phi, theta) or along simple
world axes, keeping every edit reversible: orbits are pure functions of the
chart parameters, position search runs on closed curves whose shape is
recovered from any of their points, and the dolly clamps symmetrically.

Position manipulation searches a closed curve for the viewpoint whose
two-point framing needs the least camera roll. The curve family per region:
external regions use the two constant-theta lines; apex and external-apex
regions use ellipse loops around the 180 degree fold so the camera can slide
across sides without leaving its region family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Z_UP, clamp, unit
from .orientation import (
    DEFAULT_INTRINSICS,
    TILT_RANGE_DEFAULT,
    CameraPose,
    FramingSpec,
    Intrinsics,
    camera_axes,
    feasible_orientation,
    project_point,
)
from .toric import DTSSurface, RegionLabel, SurfaceType, camera_region

GOLDEN_ITERS = 40
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# Roll from a two-point framing


def extract_roll(x_c: np.ndarray, y_c: np.ndarray) -> float:
    """Roll of a camera frame relative to the horizon-locked frame."""
    x0 = np.cross(y_c, Z_UP)
    n = np.linalg.norm(x0)
    if n < 1e-9:
        raise ValueError("view axis vertical; roll undefined")
    x0 = x0 / n
    z0 = np.cross(x0, y_c)
    return float(np.arctan2(-float(np.dot(x_c, z0)), float(np.dot(x_c, x0))))


def roll_for_viewpoint(
    position: np.ndarray,
    framing: FramingSpec,
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
) -> float:
    """Camera roll needed to satisfy a two-target framing exactly.

    Solves the two-vector alignment problem between the actual target
    directions and the desired screen rays, then measures how far the
    resulting frame is rolled off the horizon. Zero means a roll-free
    orientation can satisfy the framing.
    """
    if len(framing.points) != 2:
        raise ValueError("roll fit needs exactly two targets")
    position = np.asarray(position, dtype=float)
    world = []
    for p in framing.points:
        d = np.asarray(p, dtype=float) - position
        if np.linalg.norm(d) < 1e-9:
            raise ValueError("target coincides with the camera")
        world.append(unit(d))
    if np.linalg.norm(np.cross(world[0], world[1])) < 1e-9:
        raise ValueError("target directions parallel")
    cam = []
    for s in framing.screen:
        cam.append(unit(np.array([s[0] * intrinsics.tan_h, 1.0, s[1] * intrinsics.tan_v])))
    # orthogonal fit: world_i ~= R @ cam_i
    b = np.zeros((3, 3))
    for w, c in zip(world, cam):
        b += np.outer(w, c)
    # stabilize with the pair cross products so the fit is a proper rotation
    b += np.outer(unit(np.cross(world[0], world[1])), unit(np.cross(cam[0], cam[1])))
    u, _, vt = np.linalg.svd(b)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    x_c, y_c = rot[:, 0], rot[:, 1]
    return extract_roll(x_c, y_c)


# ---------------------------------------------------------------------------
# View-angle orbit with the near-alignment convex substitute


def _substitute_fractions(surface: DTSSurface) -> tuple[float | None, float | None]:
    """Chart fractions bounding the near-alignment zones of a concave-cap
    surface: below the first / above the second, the orbit switches to the
    convex substitute's plane caps. (None, None) when no substitution."""
    if surface.surface_type != SurfaceType.TYPE1 or surface.degenerate:
        return None, None
    band = surface.pieces[1]
    prefix = surface.piece_offsets[1]
    s_b = None
    s_a = None
    # the toric circle's rightmost (angle 0) and leftmost (angle pi)
    # points have vertical tangents; past them the cap tilts toward the
    # axis and the concave spindle caps pinch toward alignment
    if band.ang0 < 0.0:
        s_b = float((prefix + band.radius * (0.0 - band.ang0)) / surface.total_length)
    if band.ang1 > np.pi:
        s_a = float((prefix + band.radius * (np.pi - band.ang0)) / surface.total_length)
    return s_b, s_a


def view_angle_position(surface: DTSSurface, phi: float, theta: float) -> tuple[np.ndarray, bool]:
    """World point of the orbit gesture; True when the convex substitute
    (safety distance extended to r - AB/2) supplied the point."""
    s_b, s_a = _substitute_fractions(surface)
    s = abs(theta)
    behind_b = s_b is not None and s < s_b
    behind_a = s_a is not None and s > s_a
    if not behind_b and not behind_a:
        return surface.dts_to_world(phi, theta), False
    # continue past the vertical-tangency point down the substitute's
    # plane cap at the same arc-length speed; tangents match at the switch
    length = float(np.linalg.norm(surface.targets[1].position - surface.targets[0].position))
    k = surface.r * np.cos(surface.alpha)
    if behind_a:
        x_local = length / 2.0 - surface.r
        drop = (s - s_a) * surface.total_length
    else:
        x_local = length / 2.0 + surface.r
        drop = (s_b - s) * surface.total_length
    h_local = max(k - drop, 0.0)
    beta = np.pi / 2.0 * phi if theta >= 0.0 else np.pi - np.pi / 2.0 * phi
    pos = (
        surface.origin
        + x_local * surface.ex
        + h_local * (np.cos(beta) * surface.ey + np.sin(beta) * surface.ez)
    )
    return pos, True


@dataclass
class ManipulationResult:
    position: np.ndarray
    phi: float
    theta: float
    pose: CameraPose
    screen: list
    roll: float
    clamped: bool = False
    substituted: bool = False
    collision_adjusted: bool = False


def _result_for(surface: DTSSurface, phi: float, theta: float, position: np.ndarray,
                framing: FramingSpec | None, substituted: bool, clamped: bool) -> ManipulationResult:
    targets = [t.position for t in surface.targets]
    if framing is None:
        framing = FramingSpec.centered(targets)
    aim = feasible_orientation(position, framing)
    pose = CameraPose(position, aim.yaw, aim.tilt)
    screen = [project_point(p, pose) for p in framing.points]
    try:
        roll = roll_for_viewpoint(position, framing) if len(framing.points) == 2 else 0.0
    except ValueError:
        roll = 0.0
    return ManipulationResult(
        position=position,
        phi=phi,
        theta=theta,
        pose=pose,
        screen=screen,
        roll=roll,
        clamped=clamped,
        substituted=substituted,
    )


def manipulate_view_angle(
    surface: DTSSurface,
    start: tuple[float, float],
    delta: tuple[float, float],
    framing: FramingSpec | None = None,
) -> ManipulationResult:
    """Orbit on the surface by a chart-space drag (dphi, dtheta)."""
    phi0, theta0 = start
    phi = clamp(phi0 + delta[0], -1.0, 1.0)
    theta = clamp(theta0 + delta[1], -1.0, 1.0)
    clamped = (phi != phi0 + delta[0]) or (theta != theta0 + delta[1])
    position, substituted = view_angle_position(surface, phi, theta)
    return _result_for(surface, phi, theta, position, framing, substituted, clamped)


# ---------------------------------------------------------------------------
# Search curves


@dataclass(frozen=True)
class AvoidEllipse:
    """Keep-out ellipse in (phi, theta) chart space."""

    center: tuple[float, float]
    a: float  # semi-axis along phi
    b: float  # semi-axis along theta
    approximate: bool = True

    def level(self, phi: float, theta: float) -> float:
        dx = (phi - self.center[0]) / self.a
        dy = (theta - self.center[1]) / self.b
        return dx * dx + dy * dy

    def contains(self, phi: float, theta: float) -> bool:
        return self.level(phi, theta) < 1.0

    def project_out(self, phi: float, theta: float) -> tuple[float, float]:
        lv = self.level(phi, theta)
        if lv >= 1.0:
            return phi, theta
        if lv < 1e-18:
            return self.center[0] + self.a, self.center[1]
        scale = 1.0 / np.sqrt(lv)
        return (
            self.center[0] + (phi - self.center[0]) * scale,
            self.center[1] + (theta - self.center[1]) * scale,
        )


def floor_ceiling_ellipses(
    surface: DTSSurface, floor_z: float | None = None, ceiling_z: float | None = None,
    n_samples: int = 129,
) -> list[AvoidEllipse]:
    """Chart zones where the surface would dip under the floor or over the
    ceiling, fitted as ellipses around the straight-down/straight-up folds.

    Computed as if both targets sat at their mean height, so the zones are
    approximate; hard limits stay with collision handling downstream.
    """
    out = []
    base_z = float(np.mean([t.position[2] for t in surface.targets]))
    ss = np.linspace(0.0, 1.0, n_samples)
    pts_up = surface.dts_to_world_batch(np.ones(n_samples), ss)
    heights = np.abs(pts_up[:, 2] - base_z)  # meridian height swing per s
    for bound_z, sign, phi_center in ((floor_z, -1.0, -1.0), (ceiling_z, 1.0, 1.0)):
        if bound_z is None:
            continue
        margin = sign * (bound_z - base_z)  # room available in that direction
        if margin <= 0:
            # the whole surface side is out of bounds; block the full fold
            out.append(AvoidEllipse((phi_center, 0.5), 2.0, 0.5, True))
            out.append(AvoidEllipse((phi_center, -0.5), 2.0, 0.5, True))
            continue
        risky = heights > margin
        if not np.any(risky):
            continue
        # |sin beta| beyond which z exceeds the bound, per s
        with np.errstate(divide="ignore", invalid="ignore"):
            sin_crit = np.where(risky, margin / np.maximum(heights, 1e-12), 1.0)
        depth = 1.0 - (2.0 / np.pi) * np.arcsin(np.clip(sin_crit, 0.0, 1.0))
        idx = np.flatnonzero(risky)
        lo, hi = ss[idx[0]], ss[idx[-1]]
        center_s = 0.5 * (lo + hi)
        # sqrt(2) inflation so the ellipse contains the whole boxed zone,
        # not just its extreme points
        half = max(0.5 * (hi - lo), 1e-3) * np.sqrt(2.0)
        a = (float(np.max(depth)) + 1e-3) * np.sqrt(2.0)
        for side in (1.0, -1.0):
            out.append(AvoidEllipse((phi_center, side * center_s), a, half, True))
    return out


@dataclass
class CurveSegment:
    kind: str  # "line" | "arc"
    theta: float = 0.0  # line: constant theta
    phi_range: tuple[float, float] = (-1.0, 1.0)
    center: tuple[float, float] = (0.0, 0.0)  # arc: ellipse center
    a: float = 0.0
    b: float = 0.0
    t_range: tuple[float, float] = (0.0, np.pi)

    def eval(self, t: float) -> tuple[float, float]:
        t = clamp(t, 0.0, 1.0)
        if self.kind == "line":
            phi = self.phi_range[0] + t * (self.phi_range[1] - self.phi_range[0])
            return phi, self.theta
        ang = self.t_range[0] + t * (self.t_range[1] - self.t_range[0])
        return (
            self.center[0] + self.a * np.sin(ang),
            self.center[1] + self.b * np.cos(ang),
        )


_APEX_CENTERS = {
    RegionLabel.EXTERNAL_APEX_B: (0.3125, 0.0625),
    RegionLabel.APEX: (0.5, 0.125),
    RegionLabel.EXTERNAL_APEX_A: (0.6875, 0.0625),
}


@dataclass
class SearchCurve:
    segments: list
    region: RegionLabel
    start: tuple[float, float]
    avoid: tuple[AvoidEllipse, ...] = ()
    theta_bounds: tuple[float, float] = (0.0, 1.0)

    def eval(self, seg: int, t: float) -> tuple[float, float]:
        phi, theta = self.segments[seg].eval(t)
        # push the point out of the keep-out ellipses; a few passes settle
        # points caught between mutually overlapping zones
        for _ in range(4):
            moved = False
            for ell in self.avoid:
                p2 = ell.project_out(phi, theta)
                if p2 != (phi, theta):
                    phi, theta = p2
                    moved = True
            if not moved:
                break
        phi = clamp(phi, -1.0, 1.0)
        theta = clamp(theta, -1.0, 1.0)
        return phi, theta

    def sample(self, per_segment: int = 64) -> np.ndarray:
        pts = []
        for i in range(len(self.segments)):
            for t in np.linspace(0.0, 1.0, per_segment):
                pts.append(self.eval(i, t))
        return np.asarray(pts)


def build_search_curve(
    region: RegionLabel | None,
    start: tuple[float, float],
    avoid: tuple[AvoidEllipse, ...] = (),
) -> SearchCurve:
    """Closed search curve through `start`, shaped by its camera region.

    External regions: the two lines theta = +/-|theta0| joined across the
    folds. Apex and external-apex regions: a pair of mirrored ellipse
    halves around the fold at phi = -1 (start below) or +1 (start above),
    recovered from the start point so motion along the curve keeps the
    curve itself fixed.
    """
    phi0, theta0 = start
    if region is None:
        region = camera_region(theta0).label
    if region in _APEX_CENTERS:
        theta_c_abs, b = _APEX_CENTERS[region]
        side = 1.0 if theta0 >= 0.0 else -1.0
        theta_c = side * theta_c_abs
        rel = (theta0 - theta_c) / b
        # the ellipse family lives in one phi half-space (the sub-space is
        # picked by the start's side of the equator); starts too close to
        # the region's theta edge or the equator fall back to the lines
        if abs(rel) < 0.999:
            from_below = phi0 <= 0.0
            fold = -1.0 if from_below else 1.0
            a = abs(phi0 - fold) / np.sqrt(1.0 - rel * rel)
            if 1e-6 < a <= 1.0:
                a_signed = a if from_below else -a
                half = np.pi / 2.0
                segs = [
                    CurveSegment(kind="arc", center=(fold, theta_c), a=a_signed, b=b, t_range=(0.0, half)),
                    CurveSegment(kind="arc", center=(fold, theta_c), a=a_signed, b=b, t_range=(half, np.pi)),
                    CurveSegment(kind="arc", center=(fold, -theta_c), a=a_signed, b=b, t_range=(0.0, half)),
                    CurveSegment(kind="arc", center=(fold, -theta_c), a=a_signed, b=b, t_range=(half, np.pi)),
                ]
                return SearchCurve(
                    segments=segs,
                    region=region,
                    start=start,
                    avoid=tuple(avoid),
                    theta_bounds=(max(abs(theta_c) - b, 0.0), min(abs(theta_c) + b, 1.0)),
                )
    # external regions and degenerate apex starts: constant-theta lines
    t_abs = abs(theta0)
    segs = [
        CurveSegment(kind="line", theta=t_abs, phi_range=(-1.0, 1.0)),
        CurveSegment(kind="line", theta=-t_abs, phi_range=(1.0, -1.0)),
    ]
    return SearchCurve(
        segments=segs,
        region=region,
        start=start,
        avoid=tuple(avoid),
        theta_bounds=(t_abs, t_abs),
    )


def _golden_min(f, lo: float, hi: float, iters: int = GOLDEN_ITERS) -> tuple[float, float]:
    """Deterministic golden-section minimum of f over [lo, hi]."""
    a, b = lo, hi
    c = b - (b - a) * _INVPHI
    d = a + (b - a) * _INVPHI
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - (b - a) * _INVPHI
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * _INVPHI
            fd = f(d)
    t = c if fc < fd else d
    return t, min(fc, fd)


def manipulate_position(
    surface: DTSSurface,
    start: tuple[float, float],
    framing: FramingSpec,
    avoid: tuple[AvoidEllipse, ...] = (),
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
) -> ManipulationResult:
    """Move along the region's search curve to the least-roll viewpoint.

    Golden-section search runs on every curve segment with a fixed
    iteration count, so identical inputs give identical outputs. Ties go
    to the candidate nearest the start point in chart space.
    """
    curve = build_search_curve(None, start, avoid)

    def objective(seg: int):
        def f(t: float) -> float:
            phi, theta = curve.eval(seg, t)
            pos = surface.dts_to_world(phi, theta)
            try:
                return abs(roll_for_viewpoint(pos, framing, intrinsics))
            except ValueError:
                return np.pi
        return f

    candidates = []
    for i in range(len(curve.segments)):
        f = objective(i)
        t_best, f_best = _golden_min(f, 0.0, 1.0)
        for t_edge in (0.0, 1.0):
            fe = f(t_edge)
            if fe < f_best:
                t_best, f_best = t_edge, fe
        candidates.append((i, t_best, f_best))

    best_val = min(c[2] for c in candidates)
    tied = [c for c in candidates if c[2] <= best_val + 1e-9]
    phi0, theta0 = start

    def dist_to_start(c):
        phi, theta = curve.eval(c[0], c[1])
        return np.hypot(phi - phi0, theta - theta0)

    seg, t, val = min(tied, key=dist_to_start)
    phi, theta = curve.eval(seg, t)
    pos = surface.dts_to_world(phi, theta)
    return _result_for(surface, phi, theta, pos, framing, False, False)


# ---------------------------------------------------------------------------
# Dolly, world-space moves, collision push/pull


def manipulate_dolly(
    position: np.ndarray, target: np.ndarray, delta: float, d_s: float
) -> tuple[np.ndarray, bool]:
    """Move along the camera-target line; clamps at the safety distance."""
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    d = position - target
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        raise ValueError("camera at the target")
    new_dist = dist + delta
    clamped = False
    if new_dist < d_s:
        new_dist = d_s
        clamped = True
    return target + (d / dist) * new_dist, clamped


WORLD_MANIPULATOR_KINDS = ("truck", "pedestal", "forward", "pan", "tilt")


def world_manipulator(
    pose: CameraPose, kind: str, delta: float,
    tilt_range: tuple[float, float] = TILT_RANGE_DEFAULT,
) -> CameraPose:
    """Rigid move or turn in the drone's horizontal frame."""
    x_c, _, _ = camera_axes(pose.yaw, 0.0)
    heading = np.cross(Z_UP, x_c)
    pos = pose.position.copy()
    yaw, tilt = pose.yaw, pose.tilt
    if kind == "truck":
        pos = pos + delta * x_c
    elif kind == "pedestal":
        pos = pos + delta * Z_UP
    elif kind == "forward":
        pos = pos + delta * heading
    elif kind == "pan":
        yaw = float((yaw + delta + np.pi) % (2.0 * np.pi) - np.pi)
    elif kind == "tilt":
        tilt = clamp(tilt + delta, *tilt_range)
    else:
        raise ValueError(f"unknown world manipulator: {kind}")
    return CameraPose(pos, yaw, tilt, pose.roll)


def _free_intervals_on_ray(
    origin: np.ndarray, direction: np.ndarray, scene, d_s: float, clearance: float,
    t_max: float,
) -> list[tuple[float, float]]:
    """Free parameter intervals of origin + t*direction, t in [d_s, t_max]."""
    from .geometry import Aabb, BoxObstacle, SphereObstacle, TriangleObstacle

    blocked = []
    for prim in scene.primitives:
        if isinstance(prim, SphereObstacle):
            oc = origin - prim.center
            r = prim.radius + clearance
            bq = float(np.dot(oc, direction))
            cq = float(np.dot(oc, oc)) - r * r
            disc = bq * bq - cq
            if disc <= 0:
                continue
            sq = np.sqrt(disc)
            blocked.append((-bq - sq, -bq + sq))
        elif isinstance(prim, BoxObstacle):
            lo = prim.lo - clearance
            hi = prim.hi + clearance
            t0, t1 = 0.0, np.inf
            ok = True
            for ax in range(3):
                d = direction[ax]
                if abs(d) < 1e-12:
                    if not lo[ax] <= origin[ax] <= hi[ax]:
                        ok = False
                        break
                    continue
                ta = (lo[ax] - origin[ax]) / d
                tb = (hi[ax] - origin[ax]) / d
                if ta > tb:
                    ta, tb = tb, ta
                t0, t1 = max(t0, ta), min(t1, tb)
            if ok and t0 <= t1:
                blocked.append((t0, t1))
        elif isinstance(prim, TriangleObstacle):
            # conservative: blocked band around the ray-plane hit if the
            # hit point falls within `clearance` of the triangle
            n = np.cross(prim.b - prim.a, prim.c - prim.a)
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                continue
            n = n / nn
            denom = float(np.dot(direction, n))
            if abs(denom) < 1e-9:
                continue
            t_hit = float(np.dot(prim.a - origin, n)) / denom
            if t_hit < 0:
                continue
            p = origin + t_hit * direction
            if prim.distance(p) <= clearance + 1e-9:
                pad = (clearance + 1e-6) / abs(denom)
                blocked.append((t_hit - pad, t_hit + pad))
    # scene bounds clip the admissible range
    t_hi = t_max
    for ax in range(3):
        d = direction[ax]
        if abs(d) < 1e-12:
            continue
        for bound, side in ((scene.bounds.lo[ax] + clearance, -1), (scene.bounds.hi[ax] - clearance, 1)):
            t_b = (bound - origin[ax]) / d
            if d * side > 0:
                t_hi = min(t_hi, t_b)
    free = []
    events = sorted((max(b0, d_s), min(b1, t_hi)) for b0, b1 in blocked if b1 > d_s and b0 < t_hi)
    cursor = d_s
    for b0, b1 in events:
        if b0 > cursor:
            free.append((cursor, b0))
        cursor = max(cursor, b1)
    if cursor < t_hi:
        free.append((cursor, t_hi))
    return [(a, b) for a, b in free if b - a > 1e-9]


def avoid_collision(
    desired: np.ndarray,
    anchor: np.ndarray,
    scene,
    previous: np.ndarray,
    d_s: float,
    clearance: float = 0.0,
    t_max: float = 1e3,
) -> tuple[np.ndarray | None, bool]:
    """Push or pull the camera along the anchor-to-desired half-line.

    Returns (position, adjusted). Position is None when every stretch of
    the half-line is blocked, meaning the caller should hold station.
    """
    desired = np.asarray(desired, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    previous = np.asarray(previous, dtype=float)
    ray = desired - anchor
    dist = float(np.linalg.norm(ray))
    if dist < 1e-9:
        raise ValueError("desired position coincides with the anchor target")
    u = ray / dist
    free = _free_intervals_on_ray(anchor, u, scene, d_s, clearance, t_max)
    if not free:
        return None, True
    # does the desired point itself sit in free space?
    for a, b in free:
        if a - 1e-9 <= dist <= b + 1e-9:
            return desired, False
    t_prev = float(np.dot(previous - anchor, u))
    best = None
    for a, b in free:
        t = clamp(t_prev, a, b)
        cand = anchor + t * u
        score = float(np.linalg.norm(cand - previous))
        if best is None or score < best[0]:
            best = (score, cand)
    return best[1], True
