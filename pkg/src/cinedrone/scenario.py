"""Scenario files: the declarative description of a simulation run.

A scenario is a JSON document (schema version 1) holding the scene bounds,
static geometry, scripted targets and obstacles, the drone fleet, and the
numeric parameters of the run. Parsing is strict: unknown keys are
rejected and every diagnostic names the offending field path, so a typo in
a config fails loudly instead of silently using a default.

Waypoint scripts are piecewise-linear in time and hold their end values,
which keeps scripted motion deterministic and independent of tick rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Aabb, BoxObstacle, SphereObstacle

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """A scenario document that does not satisfy the schema."""


def _fail(path: str, message: str):
    raise ScenarioError(f"{path}: {message}")


def _require(doc: dict, path: str, key: str):
    if key not in doc:
        _fail(f"{path}.{key}" if path else key, "required field missing")
    return doc[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _vec3(value, path: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        _fail(path, "expected a list of three numbers")
    return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _check_keys(doc: dict, path: str, allowed):
    for key in doc:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown field")


@dataclass
class WaypointScript:
    """Times are strictly increasing; poses interpolate linearly and hold
    at both ends."""

    times: np.ndarray       # (K,)
    positions: np.ndarray   # (K, 3)
    yaws: np.ndarray        # (K,)

    def position_at(self, t: float) -> np.ndarray:
        return self._interp(t, self.positions)

    def yaw_at(self, t: float) -> float:
        return float(self._interp(t, self.yaws[:, None])[0])

    def _interp(self, t: float, values: np.ndarray) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return values[0].copy()
        if t >= ts[-1]:
            return values[-1].copy()
        j = int(np.searchsorted(ts, t, side="right") - 1)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * values[j] + w * values[j + 1]


def _parse_script(rows, path: str, base_position, base_yaw: float) -> WaypointScript:
    if not rows:
        return WaypointScript(np.zeros(1), np.asarray([base_position], dtype=float),
                              np.array([base_yaw]))
    times, positions, yaws = [], [], []
    last_yaw = base_yaw
    for i, row in enumerate(rows):
        p = f"{path}[{i}]"
        if not isinstance(row, dict):
            _fail(p, "expected an object")
        _check_keys(row, p, {"t", "position", "yaw"})
        times.append(_number(_require(row, p, "t"), f"{p}.t"))
        positions.append(_vec3(_require(row, p, "position"), f"{p}.position"))
        last_yaw = _number(row.get("yaw", last_yaw), f"{p}.yaw")
        yaws.append(last_yaw)
    times = np.array(times)
    if np.any(np.diff(times) <= 0):
        _fail(path, "waypoint times must be strictly increasing")
    if times[0] < 0:
        _fail(f"{path}[0].t", "waypoint times must be >= 0")
    return WaypointScript(times, np.array(positions), np.array(yaws))


@dataclass
class TargetSpec:
    ident: str
    script: WaypointScript


@dataclass
class ObstacleSpec:
    ident: str
    kind: str                 # "sphere" | "box"
    radius: float             # sphere radius
    half_extents: np.ndarray  # box half sizes
    script: WaypointScript

    def obstacle_at(self, t: float):
        center = self.script.position_at(t)
        if self.kind == "sphere":
            return SphereObstacle(center, self.radius)
        return BoxObstacle(center - self.half_extents,
                           center + self.half_extents)


@dataclass
class DroneSpec:
    ident: str
    role: str                 # "master" | "slave"
    position: np.ndarray
    framing: str | None = None


@dataclass
class SimParams:
    """Numeric knobs of a run; everything except d_s has a default."""

    d_s: float
    tilt_range: tuple = (-1.2, 1.2)
    fov_diag_deg: float = 92.0
    vmax: float = 2.0
    amax: float = 4.0
    w_o: float = 0.5
    window: int = 8
    eps: float = 1e-3
    min_separation: float = 1.0
    dt: float = 0.02
    seed: int = 0
    z_min: float = 0.2
    z_max: float = 4.8
    roadmap_min_radius: float = 0.5
    roadmap_max_spheres: int = 250
    follower_kp: float = 400.0
    follower_kd: float = 8.0


_PARAM_FIELDS = {f for f in SimParams.__dataclass_fields__}


@dataclass
class Scenario:
    name: str
    bounds: Aabb
    params: SimParams
    static_boxes: list = field(default_factory=list)   # BoxObstacle
    targets: list = field(default_factory=list)        # TargetSpec
    obstacles: list = field(default_factory=list)      # ObstacleSpec
    drones: list = field(default_factory=list)         # DroneSpec

    def obstacles_at(self, t: float) -> list:
        return [o.obstacle_at(t) for o in self.obstacles]


def _parse_params(doc, path: str) -> SimParams:
    if not isinstance(doc, dict):
        _fail(path, "expected an object")
    _check_keys(doc, path, _PARAM_FIELDS)
    d_s = _number(_require(doc, path, "d_s"), f"{path}.d_s")
    params = SimParams(d_s=d_s)
    for key, value in doc.items():
        if key == "d_s":
            continue
        if key == "tilt_range":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                _fail(f"{path}.tilt_range", "expected [lo, hi]")
            params.tilt_range = (_number(value[0], f"{path}.tilt_range[0]"),
                                 _number(value[1], f"{path}.tilt_range[1]"))
        elif key in ("window", "seed", "roadmap_max_spheres"):
            if isinstance(value, bool) or not isinstance(value, int):
                _fail(f"{path}.{key}", "expected an integer")
            setattr(params, key, value)
        else:
            setattr(params, key, _number(value, f"{path}.{key}"))

    checks = [
        (params.d_s > 0, "d_s", "must be > 0"),
        (0 < params.dt <= 0.1, "dt", "must be in (0, 0.1]"),
        (params.vmax > 0, "vmax", "must be > 0"),
        (params.amax > 0, "amax", "must be > 0"),
        (params.w_o >= 0, "w_o", "must be >= 0"),
        (params.window >= 1, "window", "must be >= 1"),
        (params.eps > 0, "eps", "must be > 0"),
        (params.min_separation >= 0, "min_separation", "must be >= 0"),
        (params.seed >= 0, "seed", "must be >= 0"),
        (params.z_min < params.z_max, "z_min", "must be < z_max"),
        (params.roadmap_min_radius > 0, "roadmap_min_radius", "must be > 0"),
        (params.roadmap_max_spheres >= 1, "roadmap_max_spheres",
         "must be >= 1"),
        (params.follower_kp > 0, "follower_kp", "must be > 0"),
        (params.follower_kd >= 0, "follower_kd", "must be >= 0"),
        (10.0 < params.fov_diag_deg < 170.0, "fov_diag_deg",
         "must be in (10, 170) degrees"),
        (-np.pi / 2 < params.tilt_range[0] < params.tilt_range[1] < np.pi / 2,
         "tilt_range", "must satisfy -pi/2 < lo < hi < pi/2"),
    ]
    for ok, key, msg in checks:
        if not ok:
            _fail(f"{path}.{key}", msg)
    return params


def parse_scenario(text: str) -> Scenario:
    """Scenario from its JSON form; raises ScenarioError naming the first
    offending field."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(
            f"not valid JSON: {e.msg} (line {e.lineno}, column {e.colno})"
        ) from e
    if not isinstance(doc, dict):
        _fail("", "top level must be an object")
    _check_keys(doc, "", {"schema_version", "name", "bounds", "static_boxes",
                          "targets", "obstacles", "drones", "params"})
    version = _require(doc, "", "schema_version")
    if version != SCHEMA_VERSION:
        _fail("schema_version", f"unsupported version {version!r}, "
              f"this build reads version {SCHEMA_VERSION}")

    bounds_doc = _require(doc, "", "bounds")
    if not isinstance(bounds_doc, dict):
        _fail("bounds", "expected an object")
    _check_keys(bounds_doc, "bounds", {"lo", "hi"})
    lo = _vec3(_require(bounds_doc, "bounds", "lo"), "bounds.lo")
    hi = _vec3(_require(bounds_doc, "bounds", "hi"), "bounds.hi")
    if np.any(lo >= hi):
        _fail("bounds", "lo must be strictly below hi on every axis")
    bounds = Aabb(lo, hi)

    params = _parse_params(_require(doc, "", "params"), "params")

    static_boxes = []
    for i, row in enumerate(doc.get("static_boxes", [])):
        p = f"static_boxes[{i}]"
        if not isinstance(row, dict):
            _fail(p, "expected an object")
        _check_keys(row, p, {"lo", "hi"})
        blo = _vec3(_require(row, p, "lo"), f"{p}.lo")
        bhi = _vec3(_require(row, p, "hi"), f"{p}.hi")
        if np.any(blo >= bhi):
            _fail(p, "lo must be strictly below hi on every axis")
        static_boxes.append(BoxObstacle(blo, bhi))

    targets = []
    seen = set()
    for i, row in enumerate(doc.get("targets", [])):
        p = f"targets[{i}]"
        if not isinstance(row, dict):
            _fail(p, "expected an object")
        _check_keys(row, p, {"ident", "position", "yaw", "waypoints"})
        ident = _require(row, p, "ident")
        if not isinstance(ident, str) or not ident:
            _fail(f"{p}.ident", "expected a non-empty string")
        if ident in seen:
            _fail(f"{p}.ident", f"duplicate ident {ident!r}")
        seen.add(ident)
        pos = _vec3(_require(row, p, "position"), f"{p}.position")
        yaw = _number(row.get("yaw", 0.0), f"{p}.yaw")
        script = _parse_script(row.get("waypoints", []), f"{p}.waypoints",
                               pos, yaw)
        targets.append(TargetSpec(ident, script))

    obstacles = []
    for i, row in enumerate(doc.get("obstacles", [])):
        p = f"obstacles[{i}]"
        if not isinstance(row, dict):
            _fail(p, "expected an object")
        _check_keys(row, p, {"ident", "kind", "radius", "half_extents",
                             "position", "waypoints"})
        ident = _require(row, p, "ident")
        if not isinstance(ident, str) or not ident:
            _fail(f"{p}.ident", "expected a non-empty string")
        if ident in seen:
            _fail(f"{p}.ident", f"duplicate ident {ident!r}")
        seen.add(ident)
        kind = _require(row, p, "kind")
        radius = 0.0
        half = np.zeros(3)
        if kind == "sphere":
            radius = _number(_require(row, p, "radius"), f"{p}.radius")
            if radius <= 0:
                _fail(f"{p}.radius", "must be > 0")
        elif kind == "box":
            half = _vec3(_require(row, p, "half_extents"),
                         f"{p}.half_extents")
            if np.any(half <= 0):
                _fail(f"{p}.half_extents", "must be > 0 on every axis")
        else:
            _fail(f"{p}.kind", f"unknown kind {kind!r}")
        pos = _vec3(_require(row, p, "position"), f"{p}.position")
        script = _parse_script(row.get("waypoints", []), f"{p}.waypoints",
                               pos, 0.0)
        obstacles.append(ObstacleSpec(ident, kind, radius, half, script))

    drones = []
    roles = []
    for i, row in enumerate(doc.get("drones", [])):
        p = f"drones[{i}]"
        if not isinstance(row, dict):
            _fail(p, "expected an object")
        _check_keys(row, p, {"ident", "role", "position", "framing"})
        ident = _require(row, p, "ident")
        if not isinstance(ident, str) or not ident:
            _fail(f"{p}.ident", "expected a non-empty string")
        if ident in seen:
            _fail(f"{p}.ident", f"duplicate ident {ident!r}")
        seen.add(ident)
        role = row.get("role", "slave")
        if role not in ("master", "slave"):
            _fail(f"{p}.role", f"role must be master or slave, got {role!r}")
        roles.append(role)
        pos = _vec3(_require(row, p, "position"), f"{p}.position")
        framing = row.get("framing")
        if framing is not None and not isinstance(framing, str):
            _fail(f"{p}.framing", "expected a framing name")
        drones.append(DroneSpec(ident, role, pos, framing))
    if drones and roles.count("master") != 1:
        _fail("drones", f"exactly one master drone required, "
              f"got {roles.count('master')}")

    name = doc.get("name", "unnamed")
    if not isinstance(name, str):
        _fail("name", "expected a string")
    scenario = Scenario(name, bounds, params, static_boxes, targets,
                        obstacles, drones)
    _validate_placement(scenario)
    return scenario


def _validate_placement(sc: Scenario) -> None:
    """Initial positions must be inside bounds and collision-free."""
    obstacles = sc.obstacles_at(0.0)
    for d in sc.drones:
        where = f"drones[{[x.ident for x in sc.drones].index(d.ident)}]"
        if not sc.bounds.contains(d.position):
            _fail(f"{where}.position", "outside scene bounds")
        for box in sc.static_boxes:
            if box.distance(d.position) <= 0.0:
                _fail(f"{where}.position", "inside a static box")
        for ob in obstacles:
            if ob.distance(d.position) <= 0.0:
                _fail(f"{where}.position", "inside an obstacle at t=0")
        for t in sc.targets:
            if np.linalg.norm(d.position - t.script.position_at(0.0)) \
                    < sc.params.d_s:
                _fail(f"{where}.position",
                      f"within d_s of target {t.ident!r}")
    for i, a in enumerate(sc.drones):
        for b in sc.drones[i + 1:]:
            if np.linalg.norm(a.position - b.position) \
                    < sc.params.min_separation:
                _fail("drones", f"{a.ident!r} and {b.ident!r} start closer "
                      "than min_separation")


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _round(values) -> list:
    return [float(np.round(v, 12)) for v in np.asarray(values, dtype=float)]


def serialize_scenario(sc: Scenario) -> str:
    """Canonical JSON form; parse(serialize(s)) reproduces s exactly."""
    params = {}
    for key in sorted(_PARAM_FIELDS):
        value = getattr(sc.params, key)
        if key == "tilt_range":
            params[key] = _round(value)
        elif key in ("window", "seed", "roadmap_max_spheres"):
            params[key] = int(value)
        else:
            params[key] = float(value)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "bounds": {"lo": _round(sc.bounds.lo), "hi": _round(sc.bounds.hi)},
        "params": params,
        "static_boxes": [{"lo": _round(b.lo), "hi": _round(b.hi)}
                         for b in sc.static_boxes],
        "targets": [
            {"ident": t.ident,
             "position": _round(t.script.positions[0]),
             "yaw": float(t.script.yaws[0]),
             "waypoints": [
                 {"t": float(tt), "position": _round(pp), "yaw": float(yy)}
                 for tt, pp, yy in zip(t.script.times, t.script.positions,
                                       t.script.yaws)]}
            for t in sc.targets],
        "obstacles": [
            {"ident": o.ident, "kind": o.kind,
             **({"radius": float(o.radius)} if o.kind == "sphere"
                else {"half_extents": _round(o.half_extents)}),
             "position": _round(o.script.positions[0]),
             "waypoints": [
                 {"t": float(tt), "position": _round(pp)}
                 for tt, pp in zip(o.script.times, o.script.positions)]}
            for o in sc.obstacles],
        "drones": [
            {"ident": d.ident, "role": d.role,
             "position": _round(d.position),
             **({"framing": d.framing} if d.framing else {})}
            for d in sc.drones],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
