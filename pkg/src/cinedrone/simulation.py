"""Deterministic simulation host for the drone fleet.

One authoritative loop advances the world in fixed 20 ms ticks: scripted
targets and obstacles move first, the roadmap is retagged against them
(plus the master's view frustum), conflicts are repaired, blocked or
stale paths are replanned and smoothed, then every drone runs one
follower step and re-aims its camera. Telemetry is emitted at the end of
each tick and contains no wall-clock values, so two runs with the same
scenario and command trace produce byte-identical streams; planning
durations go to the metrics table instead.

Operator commands queue between ticks and apply in submission order at
the start of the next tick (a paused simulation applies them on the next
step). Pause and step act immediately since they steer the loop itself.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .coordinator import (
    Assignment,
    CoordinationConfig,
    CoordinationContext,
    DroneView,
    detect_conflicts,
    framing_catalog,
    instantiate,
    local_repair,
    min_conflict_assign,
    switch_master,
)
from .follower import (
    ArcLengthTable,
    FollowerGains,
    SimDroneState,
    advance_goal,
    build_arc_table,
    closest_u,
    simulate_step,
)
from .geometry import SceneModel
from .manipulators import manipulate_position, world_manipulator
from .orientation import (
    CameraPose,
    FramingSpec,
    Intrinsics,
    feasible_orientation,
    pose_frustum,
    project_point,
)
from .planner import PlanParams, plan_framing_path, plan_sketch_path, validate_path
from .roadmap import RoadmapParams, build_roadmap, update_dynamic
from .scenario import Scenario
from .smoother import PortalConstraint, optimize_spline
from .toric import Target

# Portal disks shrink by this much when used as smoothing constraints so
# the hull of the drone stays inside the free spheres.
DISK_MARGIN = 0.35
# Destination drift that forces a replan while targets move.
REPLAN_STEP = 0.25
# Chart units of DTS drag per screen unit of gesture.
VIEW_DRAG_SCALE = 0.5
# Submitted sketch polylines are resampled to this spacing (meters) so
# sparse input still offers enough waypoint indices for portal routing.
SKETCH_SPACING = 0.5
# Subtended-angle change per dolly unit on two-target framings.
DOLLY_ANGLE_SCALE = 0.1

WORLD_MOVE_KINDS = ("truck", "forward", "pedestal")
# Fraction of amax reserved for centripetal acceleration when capping
# the cursor speed on curved path sections.
CURV_ACCEL_FRAC = 0.5
# How far ahead of the footpoint the curvature cap looks (meters).
CURV_LOOKAHEAD = 1.0


def curvature_speed_caps(table: ArcLengthTable, amax: float,
                         frac: float = CURV_ACCEL_FRAC) -> np.ndarray:
    """Highest cursor speed per table sample that keeps the centripetal
    acceleration v^2 * kappa within `frac` of amax.

    Curvature comes from the Menger circle through consecutive table
    samples, so the caps are exact for the piecewise-linear proxy the
    follower actually tracks.
    """
    pts = table.positions
    n = len(pts)
    caps = np.full(n, np.inf)
    if n < 3:
        return caps
    a = pts[:-2]
    b = pts[1:-1]
    c = pts[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = np.cross(b - a, c - a)
    area2 = np.linalg.norm(cross, axis=1)  # twice the triangle area
    denom = ab * bc * ca
    kappa = np.where(denom > 1e-12, 2.0 * area2 / np.maximum(denom, 1e-12),
                     0.0)
    with np.errstate(divide="ignore"):
        v = np.sqrt(np.where(kappa > 1e-9, frac * amax / kappa, np.inf))
    caps[1:-1] = v
    return caps


@dataclass
class ReplanEvent:
    tick: int
    drone: str
    reason: str          # initial | blocked | destination | sketch | command
    cost: float
    duration_ms: float   # metrics only, never serialized into telemetry


@dataclass
class DroneRuntime:
    ident: str
    role: str
    state: SimDroneState
    mode: str = "framing"            # framing | sketch | hold
    accel: float = 0.0
    speed: float = 0.0
    framing_name: str | None = None
    dts: tuple | None = None         # (phi, theta, alpha)
    destination: np.ndarray | None = None
    nodes: list | None = None
    plan_positions: np.ndarray | None = None
    table: ArcLengthTable | None = None
    sketch: np.ndarray | None = None
    curv_caps: np.ndarray | None = None
    loose: bool = False              # path was planned ignoring the frustum
    terminal: bool = False           # close enough to park at the path end
    needs_replan: str | None = None
    tracking_error: float = 0.0
    goal: np.ndarray | None = None
    desired_cache: tuple | None = None  # (key, per-target screen rays)

    @property
    def position(self) -> np.ndarray:
        return self.state.position

    def pose(self) -> CameraPose:
        return CameraPose(self.state.position, self.state.yaw,
                          self.state.gimbal)


def _conflict_key(c):
    return (c.kind.value, c.drones, c.detail)


def _resample_polyline(points: np.ndarray,
                       spacing: float = SKETCH_SPACING) -> np.ndarray:
    """Evenly respaced copy of a polyline, endpoints preserved."""
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < 1e-9:
        return points[:1].copy()
    n = max(int(np.ceil(total / spacing)) + 1, len(points))
    grid = np.linspace(0.0, total, n)
    return np.stack([np.interp(grid, s, points[:, k]) for k in range(3)],
                    axis=1)


class Simulation:
    """World state plus the tick loop; see the module docstring for the
    per-tick order."""

    def __init__(self, scenario: Scenario, catalog=None):
        self.scenario = scenario
        p = scenario.params
        self.dt = p.dt
        self.catalog = tuple(catalog) if catalog is not None \
            else framing_catalog()
        self._by_name = {f.name: f for f in self.catalog}

        self.scene = SceneModel(bounds=scenario.bounds,
                                primitives=list(scenario.static_boxes))
        self.roadmap = build_roadmap(
            self.scene,
            RoadmapParams(min_radius=p.roadmap_min_radius,
                          max_spheres=p.roadmap_max_spheres))
        self.intrinsics = Intrinsics.from_diagonal_fov(p.fov_diag_deg)
        self.config = CoordinationConfig(min_separation=p.min_separation,
                                         intrinsics=self.intrinsics)
        self.plan_params = PlanParams(d_s=p.d_s, w_o=p.w_o, z_min=p.z_min,
                                      z_max=p.z_max, window=p.window)
        self.gains = FollowerGains(p.follower_kp, p.follower_kd)
        self.terminal_gains = FollowerGains(16.0, 8.0)

        self.targets = [
            Target(spec.script.position_at(0.0),
                   orientation=np.array([0.0, 0.0, spec.script.yaw_at(0.0)]),
                   ident=spec.ident)
            for spec in scenario.targets]
        self._target_positions = np.array(
            [t.position for t in self.targets]).reshape(-1, 3)
        self.ctx = CoordinationContext(self.targets, self.roadmap,
                                       self.plan_params, self.config)

        self.drones: dict[str, DroneRuntime] = {}
        for spec in scenario.drones:
            state = SimDroneState(position=spec.position.copy())
            rt = DroneRuntime(spec.ident, spec.role, state, accel=p.amax)
            if self.targets:
                aim = feasible_orientation(
                    spec.position, FramingSpec.centered(self._target_points()),
                    p.tilt_range, intrinsics=self.intrinsics, refine=False)
                state.yaw, state.gimbal = aim.yaw, aim.tilt
            self.drones[spec.ident] = rt

        self.tick_index = 0
        self.time = 0.0
        self.paused = False
        self.step_pending = False
        self.pending: list = []
        self.telemetry: list = []
        self.metrics: list = []
        self.events: list = []
        self.assignment: Assignment | None = None
        self.current_conflicts: list = []
        self._last_conflicts: set = set()
        self._tick_plan_ms: dict = {}

        if self.drones and self.targets:
            self._initial_assignment()
        self._retag()
        for ident in sorted(self.drones):
            rt = self.drones[ident]
            if rt.destination is not None:
                self._replan(rt, "initial")
        if self.assignment is not None:
            views = self._views()
            cons = detect_conflicts(views, self.assignment, self.config)
            self.current_conflicts = cons
            self._last_conflicts = {_conflict_key(c) for c in cons}

    # -- setup ----------------------------------------------------------

    def _target_points(self) -> list:
        return [t.position for t in self.targets]

    def _master_ident(self) -> str | None:
        for rt in self.drones.values():
            if rt.role == "master":
                return rt.ident
        return None

    def _initial_assignment(self):
        explicit = {s.ident: s.framing for s in self.scenario.drones
                    if s.framing}
        master = self._master_ident()
        if len(explicit) < len(self.drones):
            views = self._views()
            self.assignment = min_conflict_assign(views, self.catalog,
                                                  self.ctx)
        else:
            self.assignment = Assignment(master, {}, {}, {}, {})
        for ident, name in sorted(explicit.items()):
            framing = self._by_name.get(name)
            if framing is None:
                raise ValueError(f"drone {ident!r} wants unknown framing "
                                 f"{name!r}")
            inst = instantiate(framing, self.targets[:framing.arity],
                               self.plan_params.d_s)
            if inst.empty:
                raise ValueError(f"framing {name!r} has no buildable "
                                 "placement for the initial target poses")
            params = inst.center_params()
            self.assignment.framings[ident] = inst
            self.assignment.destinations[ident] = inst.world_at(*params)
            self.assignment.dts_points[ident] = tuple(float(v)
                                                      for v in params)
            self.assignment.costs[ident] = 0.0
        for ident in sorted(self.assignment.framings):
            rt = self.drones[ident]
            inst = self.assignment.framings[ident]
            rt.framing_name = inst.framing.name
            rt.dts = self.assignment.dts_points[ident]
            rt.destination = np.asarray(self.assignment.destinations[ident])

    # -- public control surface ------------------------------------------

    def submit(self, cmd: dict) -> tuple[bool, str]:
        """Queue an operator command; pause/step act immediately."""
        kind = cmd.get("type")
        if kind == "pause":
            self.paused = bool(cmd.get("paused", True))
            return True, "paused" if self.paused else "resumed"
        if kind == "step":
            self.step_pending = True
            return True, "stepping"
        ok, msg = self._check_command(cmd)
        if not ok:
            return False, msg
        self.pending.append(cmd)
        return True, "queued"

    def _check_command(self, cmd: dict) -> tuple[bool, str]:
        kind = cmd.get("type")
        needs_drone = {"set_mode", "manipulate", "sketch_submit",
                       "set_accel", "switch_master", "assign_framing"}
        if kind not in needs_drone:
            return False, f"unknown command type {kind!r}"
        ident = cmd.get("drone")
        if ident not in self.drones:
            return False, f"unknown drone {ident!r}"
        if kind == "assign_framing" \
                and cmd.get("framing") not in self._by_name:
            return False, f"unknown framing {cmd.get('framing')!r}"
        if kind == "set_mode" \
                and cmd.get("mode") not in ("framing", "sketch", "hold"):
            return False, f"unknown mode {cmd.get('mode')!r}"
        if kind == "manipulate" and cmd.get("mode") not in (
                "view", "position", "dolly", "world"):
            return False, f"unknown manipulate mode {cmd.get('mode')!r}"
        return True, ""

    def run(self, n_ticks: int):
        for _ in range(n_ticks):
            self.tick()

    def advance(self) -> bool:
        """One host-loop iteration: skips the tick while paused unless a
        step was requested. Returns whether a tick ran."""
        if self.paused and not self.step_pending:
            return False
        self.step_pending = False
        self.tick()
        return True

    # -- the tick loop ----------------------------------------------------

    def tick(self):
        self._tick_plan_ms = {}
        t_next = self.time + self.dt
        tick_no = self.tick_index + 1

        for cmd in self.pending:
            self._apply_command(cmd, tick_no)
        self.pending.clear()

        # 1. scripted motion
        targets_moved = self._advance_targets(t_next)
        obstacles = self.scenario.obstacles_at(t_next)

        # 2. dynamic tags: obstacles plus the master's live frustum
        self._retag(obstacles)

        # 3. conflict repair on newly appeared conflicts
        hard_count = soft_count = 0
        if self.assignment is not None and self.assignment.framings:
            if targets_moved:
                self._refresh_instances()
            views = self._views()
            conflicts = detect_conflicts(views, self.assignment, self.config)
            hard_count = sum(1 for c in conflicts if c.hard)
            soft_count = len(conflicts) - hard_count
            keys = {_conflict_key(c) for c in conflicts}
            fresh = [c for c in conflicts
                     if _conflict_key(c) not in self._last_conflicts]
            if fresh:
                repaired = local_repair(self.assignment, fresh, views,
                                        self.catalog, self.ctx)
                self._adopt_assignment(repaired, tick_no)
            self.current_conflicts = conflicts
            self._last_conflicts = keys

        # 4. validation and replanning (at most one replan per drone)
        for ident in sorted(self.drones):
            rt = self.drones[ident]
            reason = rt.needs_replan or self._blocked_reason(rt)
            if reason:
                self._replan(rt, reason, tick_no)

        # 6. follower step (smoothing happened inside each replan)
        for ident in sorted(self.drones):
            self._advance_drone(self.drones[ident])

        # 7. camera orientation
        for ident in sorted(self.drones):
            self._aim_drone(self.drones[ident])

        # 8. telemetry and metrics
        self.tick_index = tick_no
        self.time = t_next
        self._emit(hard_count, soft_count)

    # -- tick helpers -----------------------------------------------------

    def _advance_targets(self, t: float) -> bool:
        if not self.targets:
            return False
        moved = False
        for tgt, spec in zip(self.targets, self.scenario.targets):
            pos = spec.script.position_at(t)
            yaw = spec.script.yaw_at(t)
            if not np.array_equal(pos, tgt.position):
                moved = True
            tgt.position[:] = pos
            tgt.orientation[2] = yaw
        return moved

    def _retag(self, obstacles=None):
        if obstacles is None:
            obstacles = self.scenario.obstacles_at(self.time)
        master = self._master_ident()
        frustums = []
        if master is not None and len(self.drones) > 1:
            rt = self.drones[master]
            frustums.append(pose_frustum(rt.pose(), self.intrinsics))
        update_dynamic(self.roadmap, obstacles, frustums)

    def _views(self) -> list:
        out = []
        for ident in sorted(self.drones):
            rt = self.drones[ident]
            out.append(DroneView(ident, rt.state.position.copy(),
                                 pose_frustum(rt.pose(), self.intrinsics),
                                 role=rt.role))
        return out

    def _refresh_instances(self):
        """Re-realize framings against moved targets, keeping DTS params."""
        asg = self.assignment
        for ident in sorted(asg.framings):
            rt = self.drones[ident]
            inst = asg.framings[ident]
            fresh = instantiate(inst.framing, self.targets[:inst.framing.arity],
                                self.plan_params.d_s)
            if fresh.empty:
                continue
            phi, theta, alpha = asg.dts_points[ident]
            alpha = float(np.clip(alpha, fresh.alpha_lo, fresh.alpha_hi))
            dest = fresh.world_at(phi, theta, alpha)
            asg.framings[ident] = fresh
            asg.dts_points[ident] = (phi, theta, alpha)
            asg.destinations[ident] = dest
            rt.dts = (phi, theta, alpha)
            rt.destination = np.asarray(dest)
            end = rt.plan_positions[-1] if rt.plan_positions is not None \
                else rt.position
            if rt.needs_replan is None \
                    and np.linalg.norm(dest - end) > REPLAN_STEP:
                rt.needs_replan = "destination"

    def _adopt_assignment(self, assignment: Assignment, tick_no: int):
        old = self.assignment
        self.assignment = assignment
        for ident in sorted(assignment.framings):
            rt = self.drones[ident]
            inst = assignment.framings[ident]
            dest = np.asarray(assignment.destinations[ident])
            changed = (old is None or ident not in old.framings
                       or old.framings[ident] is not inst
                       or not np.array_equal(
                           np.asarray(old.destinations[ident]), dest))
            if changed:
                rt.framing_name = inst.framing.name
                rt.dts = assignment.dts_points[ident]
                rt.destination = dest
                rt.needs_replan = rt.needs_replan or "destination"
                self.events.append({"tick": tick_no, "kind": "repair",
                                    "drone": ident,
                                    "framing": inst.framing.name})

    def _blocked_reason(self, rt: DroneRuntime) -> str | None:
        if rt.nodes is None or rt.table is None:
            return None
        ignore = rt.role == "master" or rt.loose
        k0 = 0
        if rt.plan_positions is not None and len(rt.plan_positions):
            d = np.linalg.norm(rt.plan_positions - rt.state.position, axis=1)
            k0 = int(np.argmin(d))
        if validate_path(rt.nodes[k0:], self.roadmap,
                         ignore_frustum=ignore) is not None:
            return "blocked"
        return None

    def _replan(self, rt: DroneRuntime, reason: str, tick_no: int = 0):
        rt.needs_replan = None
        if rt.mode == "sketch" and rt.sketch is not None \
                and reason != "destination":
            self._plan_sketch(rt, tick_no, reason)
            return
        if rt.destination is None:
            return
        inst = self.assignment.framings.get(rt.ident) \
            if self.assignment else None
        targets = inst.targets if inst is not None else self.targets
        params = self.plan_params
        if rt.role == "master":
            params = PlanParams(params.d_s, params.w_o, params.z_min,
                                params.z_max, params.window,
                                ignore_frustum=True)
        t0 = _time.perf_counter()
        try:
            result = plan_framing_path(rt.state.position, rt.destination,
                                       targets, self.roadmap, params)
        except ValueError:
            result = None
        escaped = False
        if result is None and not params.ignore_frustum:
            # a drone caught inside the master's view has no frustum-clean
            # exit; let the escape route cross the view once
            loose = PlanParams(params.d_s, params.w_o, params.z_min,
                               params.z_max, params.window,
                               ignore_frustum=True)
            try:
                result = plan_framing_path(rt.state.position,
                                           rt.destination, targets,
                                           self.roadmap, loose)
                escaped = result is not None
            except ValueError:
                result = None
        ms = (_time.perf_counter() - t0) * 1e3
        self._tick_plan_ms[rt.ident] = \
            self._tick_plan_ms.get(rt.ident, 0.0) + ms
        if result is None:
            rt.nodes = None
            rt.table = None
            rt.plan_positions = None
            rt.mode = "hold"
            self.events.append({"tick": tick_no, "kind": "replan_failed",
                                "drone": rt.ident, "reason": reason})
            return
        if self.assignment is not None \
                and rt.ident in self.assignment.costs:
            self.assignment.costs[rt.ident] = float(result.cost)
        self._adopt_path(rt, result.node_ids, result.positions)
        rt.loose = escaped
        event = {"tick": tick_no, "kind": "replan", "drone": rt.ident,
                 "reason": reason, "cost": round(float(result.cost), 9)}
        if escaped:
            event["frustum_ignored"] = True
        self.events.append(event)

    def _plan_sketch(self, rt: DroneRuntime, tick_no: int, reason: str):
        sketch = rt.sketch
        j = int(np.argmin(np.linalg.norm(sketch - rt.state.position,
                                         axis=1)))
        remaining = sketch[j:]
        if len(remaining) < 2:
            rt.mode = "hold"
            return
        free = ~(self.roadmap.blocked_obstacle | self.roadmap.unreachable
                 | self.roadmap.blocked_frustum)
        if not np.any(free):
            rt.mode = "hold"
            return
        centers = self.roadmap.portal_centers
        d = np.linalg.norm(centers - rt.state.position, axis=1)
        d[~free] = np.inf
        start_node = int(np.argmin(d))
        t0 = _time.perf_counter()
        try:
            result = plan_sketch_path(remaining, start_node, self.roadmap,
                                      self.plan_params)
        except ValueError:
            result = None
        lead = None
        if result is not None and self.targets:
            try:
                lead = plan_framing_path(rt.state.position,
                                         result.positions[0],
                                         self.targets, self.roadmap,
                                         self.plan_params)
            except ValueError:
                lead = None
        ms = (_time.perf_counter() - t0) * 1e3
        self._tick_plan_ms[rt.ident] = \
            self._tick_plan_ms.get(rt.ident, 0.0) + ms
        if result is None or (lead is None and self.targets):
            rt.mode = "hold"
            self.events.append({"tick": tick_no, "kind": "replan_failed",
                                "drone": rt.ident, "reason": "sketch"})
            return
        if lead is not None:
            nodes = list(lead.node_ids) + list(result.node_ids[1:])
            positions = np.vstack([lead.positions, result.positions[1:]])
        else:
            # no targets to stay clear of: fly straight onto the path
            nodes = [-1] + list(result.node_ids)
            positions = np.vstack([rt.state.position[None, :],
                                   result.positions])
        self._adopt_path(rt, nodes, positions)
        self.events.append({"tick": tick_no, "kind": "replan",
                            "drone": rt.ident, "reason": reason,
                            "cost": round(float(result.cost), 9)})

    def _adopt_path(self, rt: DroneRuntime, nodes, positions):
        positions = np.asarray(positions, dtype=float)
        if len(positions) < 2:
            # already at the destination; hold there without a curve
            rt.nodes = list(nodes)
            rt.plan_positions = positions
            rt.table = None
            rt.state.u = 0.0
            return
        cons = []
        for node in nodes:
            if node < 0:
                cons.append(None)
            else:
                radius = max(float(self.roadmap.portal_radii[node])
                             - DISK_MARGIN, 0.0)
                cons.append(PortalConstraint(
                    self.roadmap.portal_centers[node],
                    self.roadmap.portal_normals[node], radius))
        spline, _ = optimize_spline(positions, cons)
        rt.nodes = list(nodes)
        rt.plan_positions = np.asarray(positions, dtype=float)
        rt.table = build_arc_table(spline)
        rt.curv_caps = curvature_speed_caps(rt.table,
                                            self.scenario.params.amax)
        rt.state.u = 0.0
        rt.terminal = False

    def _advance_drone(self, rt: DroneRuntime):
        p = self.scenario.params
        gains = self.gains
        if rt.table is not None:
            # the cursor leads the drone's own footpoint, so a stalled
            # drone stalls the cursor instead of being left behind
            accel = rt.accel if rt.mode != "hold" else -p.amax
            vmax = p.vmax
            if rt.curv_caps is not None:
                us = rt.table.us
                i0 = int(np.searchsorted(us, rt.state.u))
                i1 = int(np.searchsorted(us, rt.state.u + CURV_LOOKAHEAD))
                ahead = rt.curv_caps[max(i0 - 1, 0):i1 + 1]
                if len(ahead):
                    vmax = float(min(vmax, ahead.min()))
            u_goal, speed, goal = advance_goal(rt.table, rt.state.u, accel,
                                               rt.speed, self.dt, vmax,
                                               p.amax)
            rt.speed = speed
            end = rt.table.position(rt.table.length)
            if not rt.terminal and u_goal >= rt.table.length - 1e-9 \
                    and np.linalg.norm(rt.state.position - end) < 0.25:
                rt.terminal = True
            landed = False
            if rt.terminal:
                # park without the aggressive tracking gains; they
                # saturate amax near the goal and never stop ringing
                goal = end
                gains = self.terminal_gains
                landed = (np.linalg.norm(rt.state.position - end) < 1e-3
                          and np.linalg.norm(rt.state.velocity) < 1e-3)
            rt.goal = goal
            if landed:
                rt.state.position = end.copy()
                rt.state.velocity = np.zeros(3)
                rt.state.acceleration = np.zeros(3)
                rt.state.u = rt.table.length
            else:
                rt.state = simulate_step(rt.state, rt.goal, self.dt, gains,
                                         p.amax, p.vmax)
            self._enforce_safety(rt)
            window = 2.0 * p.vmax * self.dt * 10.0
            foot = closest_u(rt.table, rt.state.position, rt.state.u,
                             window)
            rt.state.u = foot
            rt.tracking_error = float(np.linalg.norm(
                rt.state.position - rt.table.position(foot)))
        else:
            rt.goal = rt.state.position.copy()
            rt.state = simulate_step(rt.state, rt.goal, self.dt, gains,
                                     p.amax, p.vmax)
            self._enforce_safety(rt)
            rt.tracking_error = 0.0

    def _enforce_safety(self, rt: DroneRuntime):
        """Clamp the post-step state into bounds and out of target
        safety spheres; the follower already enforced kinematic clamps."""
        pos = rt.state.position
        lo = self.scenario.bounds.lo
        hi = self.scenario.bounds.hi
        np.clip(pos, lo, hi, out=pos)
        d_s = self.scenario.params.d_s
        for tgt in self.targets:
            d = pos - tgt.position
            dist = float(np.linalg.norm(d))
            if dist < d_s:
                if dist < 1e-12:
                    d = np.array([1.0, 0.0, 0.0])
                    dist = 1.0
                n = d / dist
                pos[:] = tgt.position + n * d_s
                radial = float(rt.state.velocity @ n)
                if radial < 0.0:
                    rt.state.velocity = rt.state.velocity - radial * n

    def _aim_drone(self, rt: DroneRuntime):
        if not self.targets:
            return
        inst = self.assignment.framings.get(rt.ident) \
            if self.assignment else None
        points = [t.position for t in inst.targets] if inst is not None \
            else self._target_points()
        aim = feasible_orientation(rt.state.position,
                                   FramingSpec.centered(points),
                                   self.scenario.params.tilt_range,
                                   intrinsics=self.intrinsics,
                                   refine=False)
        rt.state.yaw = aim.yaw
        rt.state.gimbal = aim.tilt

    # -- commands ---------------------------------------------------------

    def _apply_command(self, cmd: dict, tick_no: int):
        kind = cmd["type"]
        ident = cmd.get("drone")
        rt = self.drones.get(ident)
        handler = {
            "set_mode": self._cmd_set_mode,
            "set_accel": self._cmd_set_accel,
            "manipulate": self._cmd_manipulate,
            "sketch_submit": self._cmd_sketch,
            "switch_master": self._cmd_switch_master,
            "assign_framing": self._cmd_assign_framing,
        }[kind]
        try:
            handler(rt, cmd, tick_no)
            self.events.append({"tick": tick_no, "kind": "command",
                                "command": kind, "drone": ident})
        except (ValueError, KeyError) as e:
            self.events.append({"tick": tick_no, "kind": "error",
                                "command": kind, "drone": ident,
                                "message": str(e)})

    def _cmd_set_mode(self, rt, cmd, tick_no):
        mode = cmd["mode"]
        rt.mode = mode
        if mode == "framing" and rt.destination is not None:
            rt.needs_replan = "command"

    def _cmd_set_accel(self, rt, cmd, tick_no):
        amax = self.scenario.params.amax
        rt.accel = float(np.clip(float(cmd.get("accel", 0.0)), -amax, amax))

    def _cmd_manipulate(self, rt, cmd, tick_no):
        mode = cmd["mode"]
        if mode == "world":
            self._manip_world(rt, cmd)
            return
        asg = self.assignment
        if asg is None or rt.ident not in asg.framings:
            raise ValueError(f"drone {rt.ident!r} has no framing to "
                             "manipulate")
        inst = asg.framings[rt.ident]
        phi, theta, alpha = asg.dts_points[rt.ident]
        framing = inst.framing
        if mode == "view":
            phi = float(np.clip(phi + VIEW_DRAG_SCALE * float(
                cmd.get("dx", 0.0)), *framing.phi))
            theta = float(np.clip(theta + VIEW_DRAG_SCALE * float(
                cmd.get("dy", 0.0)), *framing.theta))
        elif mode == "dolly":
            dz = float(cmd.get("dz", 0.0))
            if framing.arity == 2:
                dz *= DOLLY_ANGLE_SCALE
            alpha = float(np.clip(alpha + dz, inst.alpha_lo, inst.alpha_hi))
        elif mode == "position":
            start = (phi + VIEW_DRAG_SCALE * float(cmd.get("dx", 0.0)),
                     theta + VIEW_DRAG_SCALE * float(cmd.get("dy", 0.0)))
            surface = inst.surface_at(alpha)
            spec = FramingSpec.centered([t.position for t in inst.targets])
            result = manipulate_position(surface, start, spec)
            phi = float(np.clip(result.phi, *framing.phi))
            theta = float(np.clip(result.theta, *framing.theta))
        dest = inst.world_at(phi, theta, alpha)
        asg.dts_points[rt.ident] = (phi, theta, alpha)
        asg.destinations[rt.ident] = dest
        rt.dts = (phi, theta, alpha)
        rt.destination = np.asarray(dest)
        rt.needs_replan = "command"

    def _manip_world(self, rt, cmd):
        axis = int(cmd.get("axis", 0))
        if not 0 <= axis < len(WORLD_MOVE_KINDS):
            raise ValueError(f"world move axis must be 0..2, got {axis}")
        base = rt.destination if rt.destination is not None \
            else rt.state.position
        pose = CameraPose(np.asarray(base, dtype=float), rt.state.yaw,
                          rt.state.gimbal)
        moved = world_manipulator(pose, WORLD_MOVE_KINDS[axis],
                                  float(cmd.get("delta", 0.0)),
                                  self.scenario.params.tilt_range)
        dest = np.clip(moved.position, self.scenario.bounds.lo,
                       self.scenario.bounds.hi)
        rt.destination = dest
        if self.assignment is not None \
                and rt.ident in self.assignment.destinations:
            self.assignment.destinations[rt.ident] = dest
        rt.needs_replan = "command"

    def _cmd_sketch(self, rt, cmd, tick_no):
        points = cmd.get("points")
        if not isinstance(points, list) or len(points) < 2:
            raise ValueError("sketch needs at least two points")
        rows = []
        heights = cmd.get("heights")
        for i, pt in enumerate(points):
            if len(pt) == 3:
                rows.append([float(v) for v in pt])
            elif len(pt) == 2:
                if heights is None:
                    raise ValueError("2D sketch points need heights")
                h = heights[i] if isinstance(heights, list) else heights
                rows.append([float(pt[0]), float(pt[1]), float(h)])
            else:
                raise ValueError("sketch points must be 2D or 3D")
        sketch = _resample_polyline(np.asarray(rows, dtype=float))
        if len(sketch) < 2:
            raise ValueError("sketch points are all at the same place")
        rt.sketch = sketch
        rt.mode = "sketch"
        self._plan_sketch(rt, tick_no, "sketch")

    def _cmd_switch_master(self, rt, cmd, tick_no):
        if self.assignment is None:
            raise ValueError("no assignment to switch masters in")
        views = self._views()
        obstacles = self.scenario.obstacles_at(self.time)
        new = switch_master(self.assignment, rt.ident, views, self.catalog,
                            self.ctx, obstacles)
        old_master = self.assignment.master
        self.drones[old_master].role = "slave"
        rt.role = "master"
        self._adopt_assignment(new, tick_no)
        self.events.append({"tick": tick_no, "kind": "master_switched",
                            "drone": rt.ident, "previous": old_master})

    def _cmd_assign_framing(self, rt, cmd, tick_no):
        framing = self._by_name[cmd["framing"]]
        inst = instantiate(framing, self.targets[:framing.arity],
                           self.plan_params.d_s)
        if inst.empty:
            raise ValueError(f"framing {framing.name!r} has no buildable "
                             "placement for the current target poses")
        probe = inst.world_at(*inst.center_params())
        if not self.scenario.bounds.contains(probe):
            raise ValueError(f"framing {framing.name!r} places the camera "
                             "outside the scene bounds")
        pp = self.plan_params
        loose = PlanParams(pp.d_s, pp.w_o, pp.z_min, pp.z_max, pp.window,
                           ignore_frustum=True)
        try:
            reachable = plan_framing_path(rt.state.position, probe,
                                          inst.targets, self.roadmap,
                                          loose) is not None
        except ValueError:
            reachable = False
        if not reachable:
            raise ValueError(f"no route to framing {framing.name!r} from "
                             "the drone's current position")
        if self.assignment is None:
            master = self._master_ident() or rt.ident
            self.assignment = Assignment(master, {}, {}, {}, {})
        params = inst.center_params()
        dest = inst.world_at(*params)
        self.assignment.framings[rt.ident] = inst
        self.assignment.destinations[rt.ident] = dest
        self.assignment.dts_points[rt.ident] = tuple(float(v)
                                                     for v in params)
        self.assignment.costs[rt.ident] = 0.0
        rt.framing_name = framing.name
        rt.dts = self.assignment.dts_points[rt.ident]
        rt.destination = np.asarray(dest)
        rt.mode = "framing"
        rt.needs_replan = "command"

    # -- output -----------------------------------------------------------

    def _emit(self, hard_count: int, soft_count: int):
        tick = self.tick_index
        for ident in sorted(self.drones):
            rt = self.drones[ident]
            s = rt.state
            self.telemetry.append({
                "tick": tick,
                "t": round(self.time, 9),
                "drone": ident,
                "position": [float(v) for v in s.position],
                "velocity": [float(v) for v in s.velocity],
                "yaw": float(s.yaw),
                "tilt": float(s.gimbal),
                "u": float(s.u),
                "speed": float(rt.speed),
                "tracking_error": float(rt.tracking_error),
                "mode": rt.mode,
                "framing": rt.framing_name,
            })
            screen, size, angle = self._framing_errors(rt)
            self.metrics.append({
                "tick": tick,
                "t": round(self.time, 9),
                "drone": ident,
                "tracking_error": float(rt.tracking_error),
                "screen_err": screen,
                "size_err": size,
                "angle_err": angle,
                "plan_ms": round(self._tick_plan_ms.get(ident, 0.0), 3),
                "hard_conflicts": hard_count,
                "soft_conflicts": soft_count,
            })

    def _framing_errors(self, rt: DroneRuntime):
        """Per-feature distance between desired and actual visual
        properties, averaged over the drone's framing targets; each
        distance is 0 on a match and grows to 2 at the opposite value."""
        if self.assignment is None \
                or rt.ident not in self.assignment.framings \
                or rt.destination is None:
            return 0.0, 0.0, 0.0
        inst = self.assignment.framings[rt.ident]
        dest = np.asarray(rt.destination, dtype=float)
        pose = rt.pose()
        desired = self._desired_rays(rt, inst, dest)
        screen = []
        size = []
        angle = []
        for tgt, want in zip(inst.targets, desired):
            s = project_point(tgt.position, pose, self.intrinsics)
            if s is None:
                screen.append(2.0)
            else:
                actual = np.array([s[0] * self.intrinsics.tan_h,
                                   s[1] * self.intrinsics.tan_v, 1.0])
                actual /= np.linalg.norm(actual)
                screen.append(float(np.linalg.norm(actual - want)))
            da = float(np.linalg.norm(rt.state.position - tgt.position))
            dd = float(np.linalg.norm(dest - tgt.position))
            size.append(2.0 * abs(da - dd) / max(da + dd, 1e-9))
            ua = rt.state.position - tgt.position
            ud = dest - tgt.position
            na, nd = np.linalg.norm(ua), np.linalg.norm(ud)
            if na < 1e-9 or nd < 1e-9:
                angle.append(0.0)
            else:
                angle.append(float(np.linalg.norm(ua / na - ud / nd)))
        return (round(float(np.mean(screen)), 9),
                round(float(np.mean(size)), 9),
                round(float(np.mean(angle)), 9))

    def _desired_rays(self, rt: DroneRuntime, inst, dest: np.ndarray):
        """Per-target view rays from the destination with the best
        feasible orientation there; what the operator asked to see."""
        key = (dest.tobytes(),
               tuple(t.position.tobytes() for t in inst.targets))
        if rt.desired_cache is not None and rt.desired_cache[0] == key:
            return rt.desired_cache[1]
        points = [t.position for t in inst.targets]
        aim = feasible_orientation(dest, FramingSpec.centered(points),
                                   self.scenario.params.tilt_range,
                                   intrinsics=self.intrinsics, refine=False)
        pose = CameraPose(dest, aim.yaw, aim.tilt)
        rays = []
        for tgt in inst.targets:
            s = project_point(tgt.position, pose, self.intrinsics)
            if s is None:
                rays.append(np.array([0.0, 0.0, 1.0]))
            else:
                ray = np.array([s[0] * self.intrinsics.tan_h,
                                s[1] * self.intrinsics.tan_v, 1.0])
                rays.append(ray / np.linalg.norm(ray))
        rt.desired_cache = (key, rays)
        return rays

    def telemetry_text(self) -> str:
        rows = [json.dumps(row, sort_keys=True) for row in self.telemetry]
        rows += [json.dumps(row, sort_keys=True) for row in self.events]
        return "\n".join(rows) + "\n"


METRIC_COLUMNS = ("tick", "t", "drone", "tracking_error", "screen_err",
                  "size_err", "angle_err", "plan_ms", "hard_conflicts",
                  "soft_conflicts")


def export_metrics(sim: Simulation) -> str:
    """Tab-separated metrics table, one row per drone per tick.

    Columns: tick and simulation time; tracking_error is the distance to
    the follower goal in meters; screen_err, size_err and angle_err are
    the 0..2 normalized distances between desired and actual visual
    properties averaged over the drone's framing targets; plan_ms is the
    wall-clock planning time spent on the drone this tick (0 when no
    replan happened); conflict counts are fleet-wide.
    """
    lines = ["# " + export_metrics.__doc__.strip().split("\n")[0],
             "\t".join(METRIC_COLUMNS)]
    for row in sim.metrics:
        lines.append("\t".join(str(row[c]) for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"
