"""Camera aiming: place each target at a desired screen position.

The camera frame is yaw-then-tilt with zero roll: the view axis y_c tilts
up by `tilt` from the horizontal heading `yaw`, the right axis x_c stays
on the horizon, z_c completes the right-handed triad. Screen x runs along
x_c, screen y along z_c, both normalized to [-1, 1].

The solver alternates a yaw pass and a tilt pass; each pass applies the
mean directed angle from the desired rays (through the wanted screen
points) to the actual target rays. Tilt is clamped to its interval after
every pass. Because two screen targets generally cannot both be satisfied
with two angles, a screen-space Gauss-Newton polish runs afterwards and
the best pose seen under the screen metric is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Z_UP, Frustum, clamp, rot_z, unit

BEHIND_PENALTY = 4.0


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera, screen coordinates in [-1, 1] on both axes."""

    tan_h: float
    tan_v: float

    @staticmethod
    def from_diagonal_fov(diag_deg: float = 92.0, aspect: float = 16.0 / 9.0) -> "Intrinsics":
        tan_d = np.tan(np.radians(diag_deg) / 2.0)
        tan_h = tan_d / np.sqrt(1.0 + 1.0 / (aspect * aspect))
        return Intrinsics(tan_h=float(tan_h), tan_v=float(tan_h / aspect))

    @property
    def fov_h(self) -> float:
        return 2.0 * float(np.arctan(self.tan_h))

    @property
    def fov_v(self) -> float:
        return 2.0 * float(np.arctan(self.tan_v))


DEFAULT_INTRINSICS = Intrinsics.from_diagonal_fov()

TILT_RANGE_DEFAULT = (-np.pi / 2 + 0.05, np.pi / 2 - 0.05)


@dataclass
class FramingSpec:
    """World targets paired with where they should appear on screen."""

    points: list  # world positions
    screen: list  # desired screen coordinates, each in [-1, 1]^2

    def __post_init__(self):
        self.points = [np.asarray(p, dtype=float) for p in self.points]
        self.screen = [np.asarray(s, dtype=float) for s in self.screen]
        if len(self.points) != len(self.screen):
            raise ValueError("one screen point per target")
        if not self.points:
            raise ValueError("need at least one target")
        for s in self.screen:
            if np.any(np.abs(s) > 1.0 + 1e-9):
                raise ValueError("screen points must lie in [-1, 1]^2")

    @staticmethod
    def centered(points: list) -> "FramingSpec":
        return FramingSpec(points=list(points), screen=[np.zeros(2) for _ in points])


@dataclass
class CameraPose:
    position: np.ndarray
    yaw: float = 0.0
    tilt: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


def camera_axes(yaw: float, tilt: float, roll: float = 0.0):
    """Right, view, up axes of the camera frame."""
    x_c = rot_z(yaw) @ np.array([1.0, 0.0, 0.0])
    y_c = np.cos(tilt) * (rot_z(yaw) @ np.array([0.0, 1.0, 0.0])) + np.sin(tilt) * Z_UP
    z_c = np.cross(x_c, y_c)
    if roll != 0.0:
        c, s = np.cos(roll), np.sin(roll)
        x_r = c * x_c - s * z_c
        z_r = s * x_c + c * z_c
        x_c, z_c = x_r, z_r
    return x_c, y_c, z_c


def pose_axes(pose: CameraPose):
    return camera_axes(pose.yaw, pose.tilt, pose.roll)


def project_point(
    point: np.ndarray, pose: CameraPose, intrinsics: Intrinsics = DEFAULT_INTRINSICS
) -> np.ndarray | None:
    """Screen position of a world point, or None when behind the camera."""
    x_c, y_c, z_c = pose_axes(pose)
    d = np.asarray(point, dtype=float) - pose.position
    if np.linalg.norm(d) < 1e-12:
        raise ValueError("point at the camera origin")
    depth = float(np.dot(d, y_c))
    if depth <= 1e-12:
        return None
    sx = float(np.dot(d, x_c)) / (depth * intrinsics.tan_h)
    sy = float(np.dot(d, z_c)) / (depth * intrinsics.tan_v)
    return np.array([sx, sy])


def on_screen(point: np.ndarray, pose: CameraPose, intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> bool:
    s = project_point(point, pose, intrinsics)
    return s is not None and abs(s[0]) <= 1.0 and abs(s[1]) <= 1.0


def desired_ray(yaw: float, tilt: float, screen_pt: np.ndarray, intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> np.ndarray:
    """Unit world direction whose projection lands at `screen_pt`."""
    x_c, y_c, z_c = camera_axes(yaw, tilt)
    v = y_c + screen_pt[0] * intrinsics.tan_h * x_c + screen_pt[1] * intrinsics.tan_v * z_c
    return unit(v)


def _horizontal_angle(v_from: np.ndarray, v_to: np.ndarray) -> float | None:
    a = np.array([v_from[0], v_from[1]])
    b = np.array([v_to[0], v_to[1]])
    if np.linalg.norm(a) < 1e-12 or np.linalg.norm(b) < 1e-12:
        return None
    return float(np.arctan2(a[0] * b[1] - a[1] * b[0], float(np.dot(a, b))))


def yaw_error(yaw: float, tilt: float, position: np.ndarray, target: np.ndarray,
              screen_pt: np.ndarray, intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> float:
    """Directed horizontal angle from the desired ray to the target ray."""
    v_d = desired_ray(yaw, tilt, np.asarray(screen_pt, dtype=float), intrinsics)
    v_a = unit(np.asarray(target, dtype=float) - position)
    ang = _horizontal_angle(v_d, v_a)
    return 0.0 if ang is None else ang


def tilt_error(yaw: float, tilt: float, position: np.ndarray, target: np.ndarray,
               screen_pt: np.ndarray, intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> float:
    """Directed angle about the right axis from the desired to the target ray."""
    x_c, _, _ = camera_axes(yaw, tilt)
    v_d = desired_ray(yaw, tilt, np.asarray(screen_pt, dtype=float), intrinsics)
    v_a = unit(np.asarray(target, dtype=float) - position)
    pd = v_d - np.dot(v_d, x_c) * x_c
    pa = v_a - np.dot(v_a, x_c) * x_c
    nd, na = np.linalg.norm(pd), np.linalg.norm(pa)
    if nd < 1e-12 or na < 1e-12:
        return 0.0
    pd, pa = pd / nd, pa / na
    s = float(np.dot(np.cross(pd, pa), x_c))
    return float(np.arctan2(s, float(np.dot(pd, pa))))


def screen_error_grid(position: np.ndarray, framing: FramingSpec, psis: np.ndarray,
                      lams: np.ndarray, intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> np.ndarray:
    """RMS screen error over a (psi, lam) grid; behind-camera targets incur
    a distance-to-front penalty so the landscape stays informative."""
    position = np.asarray(position, dtype=float)
    dirs = np.stack([p - position for p in framing.points])  # (T, 3)
    want = np.stack(framing.screen)  # (T, 2)
    cp, sp = np.cos(psis), np.sin(psis)
    xs = np.stack([cp, sp, np.zeros_like(cp)], axis=1)  # (P, 3)
    head = np.stack([-sp, cp, np.zeros_like(cp)], axis=1)
    cl, sl = np.cos(lams), np.sin(lams)
    y = cl[None, :, None] * head[:, None, :] + sl[None, :, None] * Z_UP  # (P, L, 3)
    z = np.cross(np.broadcast_to(xs[:, None, :], y.shape), y)
    depth = np.einsum("tk,plk->plt", dirs, y)
    px = np.einsum("tk,pk->pt", dirs, xs)[:, None, :]
    pz = np.einsum("tk,plk->plt", dirs, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = px / (depth * intrinsics.tan_h) - want[None, None, :, 0]
        sy = pz / (depth * intrinsics.tan_v) - want[None, None, :, 1]
        err2 = sx * sx + sy * sy
    norms = np.linalg.norm(dirs, axis=1)
    cosang = depth / norms[None, None, :]
    behind = depth <= 1e-9
    err2 = np.where(behind, (BEHIND_PENALTY + (1.0 - cosang)) ** 2, err2)
    return np.sqrt(np.mean(err2, axis=2))


def screen_error(position: np.ndarray, yaw: float, tilt: float, framing: FramingSpec,
                 intrinsics: Intrinsics = DEFAULT_INTRINSICS) -> float:
    grid = screen_error_grid(position, framing, np.array([yaw]), np.array([tilt]), intrinsics)
    return float(grid[0, 0])


def initial_orientation(position: np.ndarray, framing: FramingSpec) -> tuple[float, float, bool]:
    """Heading and tilt of the mean target direction; flag if it was vertical."""
    position = np.asarray(position, dtype=float)
    dirs = []
    for p in framing.points:
        d = p - position
        n = np.linalg.norm(d)
        if n < 1e-9:
            raise ValueError("camera position coincides with a target")
        dirs.append(d / n)
    mean_dir = np.mean(dirs, axis=0)
    if np.linalg.norm(mean_dir) < 1e-12:
        mean_dir = dirs[0].copy()
    vertical = bool(np.hypot(mean_dir[0], mean_dir[1]) < 1e-12)
    if vertical:
        mean_dir = mean_dir + np.array([1e-6, 0.0, 0.0])
    yaw = float(np.arctan2(-mean_dir[0], mean_dir[1]))
    tilt = float(np.arctan2(mean_dir[2], np.hypot(mean_dir[0], mean_dir[1])))
    return yaw, tilt, vertical


@dataclass
class AimResult:
    yaw: float
    tilt: float
    converged: bool
    iterations: int
    residual: float  # RMS screen error at the returned pose
    refined: bool = False
    vertical_init: bool = False


def _residuals_jacobian(dirs, want, psi, lam, tan_h, tan_v):
    """Stacked screen residuals r in R^{2T} and the (2T, 2) Jacobian in
    (psi, lam), or None when any target sits behind the camera.

    Uses the frame derivatives dx_c/dpsi = h, dy_c/dpsi = -cos(lam) x_c,
    dz_c/dpsi = sin(lam) x_c, dy_c/dlam = z_c, dz_c/dlam = -y_c where h is
    the horizontal heading; everything else is quotient rule.
    """
    cp, sp = np.cos(psi), np.sin(psi)
    cl, sl = np.cos(lam), np.sin(lam)
    x_c = np.array([cp, sp, 0.0])
    head = np.array([-sp, cp, 0.0])
    y_c = cl * head + sl * Z_UP
    z_c = cl * Z_UP - sl * head

    depth = dirs @ y_c
    if np.any(depth <= 1e-9):
        return None
    px = dirs @ x_c
    pz = dirs @ z_c
    inv = 1.0 / depth
    sx = px * inv / tan_h - want[:, 0]
    sy = pz * inv / tan_v - want[:, 1]

    dpx_dpsi = dirs @ head
    ddepth_dpsi = -cl * px
    ddepth_dlam = pz
    dpz_dpsi = sl * px
    dpz_dlam = -depth
    inv2 = inv * inv
    dsx_dpsi = (dpx_dpsi * depth - px * ddepth_dpsi) * inv2 / tan_h
    dsx_dlam = (-px * ddepth_dlam) * inv2 / tan_h
    dsy_dpsi = (dpz_dpsi * depth - pz * ddepth_dpsi) * inv2 / tan_v
    dsy_dlam = (dpz_dlam * depth - pz * ddepth_dlam) * inv2 / tan_v

    r = np.concatenate([sx, sy])
    jac = np.stack([np.concatenate([dsx_dpsi, dsy_dpsi]),
                    np.concatenate([dsx_dlam, dsy_dlam])], axis=1)
    return r, jac


def _grid_local_minima(grid: np.ndarray, limit: int) -> np.ndarray:
    """(i, j) cells at or below all 8 neighbors, cheapest first, at most
    `limit` of them. Axis 0 wraps (yaw), axis 1 is edge-padded (tilt)."""
    p, l = grid.shape
    padded = np.full((p, l + 2), np.inf)
    padded[:, 1:-1] = grid
    is_min = np.ones((p, l), dtype=bool)
    for dp in (-1, 0, 1):
        for dl in (0, 1, 2):
            if dp == 0 and dl == 1:
                continue
            is_min &= grid <= np.roll(padded, dp, axis=0)[:, dl:dl + l]
    idx = np.argwhere(is_min)
    order = np.argsort(grid[is_min], kind="stable")
    return idx[order[:limit]]


def _gauss_newton(position, framing, yaw, tilt, tilt_range, intrinsics,
                  steps=30):
    """Polish (yaw, tilt) with damped Gauss-Newton on the stacked screen
    residuals; the analytic Jacobian gives quadratic convergence near an
    optimum. Steps that fail to reduce the RMS error raise the damping; a
    start (or trial) with a target behind the camera falls back to the
    incoming pose under the penalized metric. Tilt stays clamped to its
    interval throughout."""
    dirs = np.stack([np.asarray(p, dtype=float) - position
                     for p in framing.points])
    want = np.stack([np.asarray(s, dtype=float) for s in framing.screen])
    tan_h, tan_v = intrinsics.tan_h, intrinsics.tan_v

    out = _residuals_jacobian(dirs, want, yaw, tilt, tan_h, tan_v)
    if out is None:
        return yaw, tilt, screen_error(position, yaw, tilt, framing,
                                       intrinsics)
    r, jac = out
    cur = float(np.sqrt(np.mean(r * r)))
    damping = 0.0
    for _ in range(steps):
        a = jac.T @ jac
        g = jac.T @ r
        accepted = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(a + damping * np.eye(2), -g)
            except np.linalg.LinAlgError:
                damping = max(damping * 10.0, 1e-8)
                continue
            ny = yaw + delta[0]
            nl = clamp(tilt + delta[1], *tilt_range)
            trial = _residuals_jacobian(dirs, want, ny, nl, tan_h, tan_v)
            if trial is not None:
                ne = float(np.sqrt(np.mean(trial[0] * trial[0])))
                if ne < cur:
                    yaw, tilt, cur = ny, nl, ne
                    r, jac = trial
                    damping *= 0.1
                    accepted = True
                    break
            damping = max(damping * 10.0, 1e-8)
        if not accepted:
            break
        if max(abs(delta[0]), abs(delta[1])) < 1e-12 or cur < 1e-14:
            break
    yaw = float((yaw + np.pi) % (2.0 * np.pi) - np.pi)
    return yaw, tilt, cur


def feasible_orientation(
    position: np.ndarray,
    framing: FramingSpec,
    tilt_range: tuple[float, float] = TILT_RANGE_DEFAULT,
    eps: float = 1e-3,
    max_iter: int = 50,
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
    refine: bool = True,
) -> AimResult:
    """Best yaw/tilt for the framing; roll and pitch stay exactly zero.

    Runs the alternating mean-correction loop from the mean-direction
    start, then (optionally) a multi-start screen-space polish. Returns
    the best pose by RMS screen error; `converged` reports whether the
    alternation met its own eps before max_iter.
    """
    position = np.asarray(position, dtype=float)
    yaw, tilt, vertical = initial_orientation(position, framing)
    tilt = clamp(tilt, *tilt_range)
    dirs = [unit(p - position) for p in framing.points]

    best_yaw, best_tilt = yaw, tilt
    best_err = screen_error(position, yaw, tilt, framing, intrinsics)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        dpsis = []
        for v, s in zip(dirs, framing.screen):
            v_d = desired_ray(yaw, tilt, s, intrinsics)
            ang = _horizontal_angle(v_d, v)
            if ang is not None:
                dpsis.append(ang)
        dpsi = float(np.mean(dpsis)) if dpsis else 0.0
        yaw = float((yaw + dpsi + np.pi) % (2.0 * np.pi) - np.pi)

        dlams = []
        for p, s in zip(framing.points, framing.screen):
            dlams.append(tilt_error(yaw, tilt, position, p, s, intrinsics))
        raw = float(np.mean(dlams)) if dlams else 0.0
        new_tilt = clamp(tilt + raw, *tilt_range)
        dlam = new_tilt - tilt
        tilt = new_tilt

        e = screen_error(position, yaw, tilt, framing, intrinsics)
        if e < best_err:
            best_yaw, best_tilt, best_err = yaw, tilt, e
        if abs(dpsi) < eps and abs(dlam) < eps:
            converged = True
            break

    refined = False
    if refine:
        # basin scan, then polish one start per distinct grid basin
        psis = np.linspace(-np.pi, np.pi, 288, endpoint=False)
        lams = np.linspace(tilt_range[0], tilt_range[1], 97) if tilt_range[1] > tilt_range[0] else np.array([tilt_range[0]])
        grid = screen_error_grid(position, framing, psis, lams, intrinsics)
        starts = [(best_yaw, best_tilt)]
        for i, j in _grid_local_minima(grid, limit=6):
            starts.append((float(psis[i]), float(lams[j])))
        for sy, sl in starts:
            ry, rl, re = _gauss_newton(position, framing, sy, sl, tilt_range, intrinsics)
            if re < best_err - 1e-12:
                best_yaw, best_tilt, best_err = ry, rl, re
                refined = True

    return AimResult(best_yaw, best_tilt, converged, it, best_err, refined, vertical)


def look_at_targets(
    position: np.ndarray,
    target_points: list,
    tilt_range: tuple[float, float] = TILT_RANGE_DEFAULT,
    eps: float = 1e-3,
    max_iter: int = 50,
) -> AimResult:
    """Center the given targets on screen (the common framing)."""
    return feasible_orientation(position, FramingSpec.centered(target_points), tilt_range, eps, max_iter)


def aim_pose(
    position: np.ndarray,
    target_points: list,
    tilt_range: tuple[float, float] = TILT_RANGE_DEFAULT,
    roll: float = 0.0,
) -> CameraPose:
    res = look_at_targets(position, target_points, tilt_range)
    return CameraPose(position=np.asarray(position, dtype=float), yaw=res.yaw, tilt=res.tilt, roll=roll)


def pose_frustum(
    pose: CameraPose,
    intrinsics: Intrinsics = DEFAULT_INTRINSICS,
    near: float = 0.0,
    far: float = np.inf,
) -> Frustum:
    """View frustum of a camera pose (roll folded into the axes)."""
    x_c, y_c, z_c = pose_axes(pose)
    return Frustum(
        apex=pose.position,
        forward=y_c,
        right=x_c,
        up=z_c,
        tan_h=intrinsics.tan_h,
        tan_v=intrinsics.tan_v,
        near=near,
        far=far,
    )
