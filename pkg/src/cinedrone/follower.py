"""Trajectory following for simulated drones.

The spline is reparametrized by arc length into a lookup table. Each tick
the drone's footpoint on the curve advances monotonically, a goal cursor
leads it by the commanded speed, and a clamped PD law on a double
integrator chases the cursor. Because the cursor is re-anchored to the
drone's own footpoint every tick it can never run away from a drone that
falls behind.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .smoother import QuinticSpline


@dataclass
class ArcLengthTable:
    """Samples of a spline indexed by arc length u in [0, length]."""

    us: np.ndarray         # (K,) strictly increasing, us[0] = 0
    positions: np.ndarray  # (K, 3)
    params: np.ndarray     # (K,) global spline parameter per sample

    @property
    def length(self) -> float:
        return float(self.us[-1])

    def position(self, u) -> np.ndarray:
        """Linear interpolation; end-clamped. u scalar or array."""
        scalar = np.isscalar(u)
        u = np.clip(np.atleast_1d(np.asarray(u, dtype=float)), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.us, u, side="right") - 1,
                      0, len(self.us) - 2)
        span = self.us[idx + 1] - self.us[idx]
        w = np.where(span > 0, (u - self.us[idx]) / np.maximum(span, 1e-300), 0.0)
        out = self.positions[idx] + w[:, None] * (
            self.positions[idx + 1] - self.positions[idx])
        return out[0] if scalar else out

    def param(self, u: float) -> float:
        """Global spline parameter at arc length u (linear between samples)."""
        u = float(np.clip(u, 0.0, self.length))
        idx = int(np.clip(np.searchsorted(self.us, u, side="right") - 1,
                          0, len(self.us) - 2))
        span = self.us[idx + 1] - self.us[idx]
        w = (u - self.us[idx]) / span if span > 0 else 0.0
        return float(self.params[idx] + w * (self.params[idx + 1] - self.params[idx]))


def build_arc_table(spline: QuinticSpline, ds: float = 0.25) -> ArcLengthTable:
    """Adaptive arc-length sampling of a spline.

    Intervals are split until the curve midpoint deviates from the chord
    midpoint by less than half a millimeter, which keeps the linear
    interpolation error of the table under 1e-3 m.
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    tol = 5e-4
    # seed with ds-spaced parameters per piece, then refine
    seeds = [0.0]
    for i in range(spline.n_pieces):
        chord = np.linalg.norm(
            spline.evaluate(float(i + 1)) - spline.evaluate(float(i)))
        k = max(2, int(np.ceil(chord / ds)))
        seeds.extend((i + (j + 1) / k) for j in range(k))
    params = [seeds[0]]
    pts = [spline.evaluate(seeds[0])]
    for s1 in seeds[1:]:
        stack = [(params[-1], pts[-1], s1, spline.evaluate(s1))]
        out = []
        while stack:
            a, pa, b, pb = stack.pop()
            sm = 0.5 * (a + b)
            pm = spline.evaluate(sm)
            if np.linalg.norm(pm - 0.5 * (pa + pb)) > tol and b - a > 1e-6:
                stack.append((sm, pm, b, pb))
                stack.append((a, pa, sm, pm))
            else:
                out.append((b, pb))
        for s, p in out:
            params.append(s)
            pts.append(p)
    pts = np.asarray(pts)
    chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    us = np.concatenate([[0.0], np.cumsum(chords)])
    # drop zero-length duplicates so us stays strictly increasing
    keep = np.concatenate([[True], chords > 1e-12])
    return ArcLengthTable(us[keep], pts[keep], np.asarray(params)[keep])


def closest_u(table: ArcLengthTable, point, u_prev: float,
              window_m: float) -> float:
    """Arc length of the curve point nearest to `point`, searched in
    [u_prev, u_prev + window_m]; never behind u_prev.

    Projects the point onto every table segment in the window, so the
    result is exact for the piecewise-linear proxy of the curve (within
    the table's interpolation tolerance of the true footpoint).
    """
    point = np.asarray(point, dtype=float)
    lo = float(np.clip(u_prev, 0.0, table.length))
    hi = float(np.clip(u_prev + window_m, lo, table.length))
    us, ps = table.us, table.positions
    j0 = int(np.clip(np.searchsorted(us, lo, side="right") - 1, 0, len(us) - 2))
    j1 = int(np.clip(np.searchsorted(us, hi, side="left"), j0 + 1, len(us) - 1))
    a = ps[j0:j1]
    seg = ps[j0 + 1:j1 + 1] - a
    t = (np.einsum("ku,ku->k", point - a, seg)
         / np.maximum(np.einsum("ku,ku->k", seg, seg), 1e-300))
    u_cand = us[j0:j1] + np.clip(t, 0.0, 1.0) * (us[j0 + 1:j1 + 1] - us[j0:j1])
    u_cand = np.clip(u_cand, lo, hi)
    p_cand = table.position(u_cand)
    d2 = np.einsum("ku,ku->k", p_cand - point, p_cand - point)
    return float(u_cand[int(np.argmin(d2))])


def advance_goal(table: ArcLengthTable, u_t: float, accel: float,
                 speed: float, dt: float, vmax: float,
                 amax: float) -> tuple[float, float, np.ndarray]:
    """Integrate the commanded traversal speed and move the goal cursor.

    Returns (u', speed', goal point): speed' is the commanded acceleration
    clamped to +-amax integrated over dt and held in [0, vmax]; the cursor
    advances from the footpoint u_t by speed'*dt, pinned at the path end.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = float(np.clip(accel, -amax, amax))
    new_speed = float(np.clip(speed + a * dt, 0.0, vmax))
    u_new = min(u_t + new_speed * dt, table.length)
    return u_new, new_speed, table.position(u_new)


@dataclass
class FollowerGains:
    kp: float = 4.0
    kd: float = 4.0


@dataclass
class SimDroneState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    gimbal: float = 0.0
    u: float = 0.0


def simulate_step(state: SimDroneState, goal, dt: float,
                  gains: FollowerGains, amax: float,
                  vmax: float) -> SimDroneState:
    """One semi-implicit Euler step of the clamped PD tracking law
    a = Kp (goal - x) - Kd v."""
    if dt <= 0 or dt > 0.1:
        raise ValueError("dt must be in (0, 0.1] s")
    goal = np.asarray(goal, dtype=float)
    a = gains.kp * (goal - state.position) - gains.kd * state.velocity
    an = np.linalg.norm(a)
    if an > amax:
        a = a * (amax / an)
    v = state.velocity + a * dt
    vn = np.linalg.norm(v)
    if vn > vmax:
        v = v * (vmax / vn)
    return SimDroneState(
        position=state.position + v * dt,
        velocity=v,
        acceleration=a,
        yaw=state.yaw,
        gimbal=state.gimbal,
        u=state.u,
    )


def follow_timed(table: ArcLengthTable, t: float, vmax: float,
                 amax: float) -> np.ndarray:
    """Goal point for clock-driven playback: a trapezoidal speed profile
    with ramps of slope amax, cruising at vmax, stopping at the path end."""
    if t <= 0:
        return table.position(0.0)
    total = table.length
    s_ramp = vmax * vmax / (2.0 * amax)
    if total >= 2.0 * s_ramp:
        t_ramp = vmax / amax
        t_cruise = (total - 2.0 * s_ramp) / vmax
        if t < t_ramp:
            s = 0.5 * amax * t * t
        elif t < t_ramp + t_cruise:
            s = s_ramp + vmax * (t - t_ramp)
        elif t < 2.0 * t_ramp + t_cruise:
            td = t - t_ramp - t_cruise
            s = s_ramp + vmax * t_cruise + vmax * td - 0.5 * amax * td * td
        else:
            s = total
    else:
        v_peak = np.sqrt(amax * total)
        t_peak = v_peak / amax
        if t < t_peak:
            s = 0.5 * amax * t * t
        elif t < 2.0 * t_peak:
            td = t - t_peak
            s = 0.5 * total + v_peak * td - 0.5 * amax * td * td
        else:
            s = total
    return table.position(min(s, total))


@dataclass
class TelemetryRecord:
    t: float
    drone_id: str
    position: np.ndarray
    velocity: np.ndarray
    u: float
    tracking_error: float
