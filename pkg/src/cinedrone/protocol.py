"""Wire protocol between the simulation host and operator clients.

Framing is length-delimited text: each message is the ASCII decimal
byte length of the payload, a single ``\\n``, then that many bytes of
UTF-8 JSON. One JSON object per frame, ``type`` field mandatory.

Server -> client: hello (once per connection), state_snapshot (every
fifth tick), state_delta (every tick), ack (per command), error
(protocol violations). Client -> server: command.

The command envelope is ``{"type": "command", "seq": n, "command":
{...}}`` where the inner object is one of the operator commands
(set_mode, set_accel, manipulate, sketch_submit, switch_master,
assign_framing, pause, step). validate_command checks the inner shape;
scene-level checks (does the drone exist, is the framing known) stay
with the simulation, which acks with ok=False instead.
"""

from __future__ import annotations

import json

import numpy as np

PROTOCOL_VERSION = 1
MAX_FRAME = 4 * 1024 * 1024
MAX_HEADER_DIGITS = 10
SPLINE_WIRE_POINTS = 160

MESSAGE_TYPES = frozenset(
    {"hello", "state_snapshot", "state_delta", "command", "ack", "error"})

# inner command kinds and the keys each may carry ("type" implied)
COMMAND_KEYS = {
    "pause": {"paused"},
    "step": set(),
    "set_mode": {"drone", "mode"},
    "set_accel": {"drone", "accel"},
    "manipulate": {"drone", "mode", "dx", "dy", "dz", "axis", "delta"},
    "sketch_submit": {"drone", "points", "heights"},
    "switch_master": {"drone"},
    "assign_framing": {"drone", "framing"},
}

_ENVELOPE_KEYS = {
    "hello": {"protocol", "scenario", "dt", "tick", "time"},
    "state_snapshot": {"tick", "time", "drones", "targets"},
    "state_delta": {"tick", "time", "drones"},
    "command": {"seq", "command"},
    "ack": {"seq", "ok", "detail"},
    "error": {"detail"},
}


class ProtocolError(ValueError):
    pass


def _plain(value):
    """Recursively convert numpy containers/scalars to JSON-safe types."""
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def encode_message(msg: dict) -> bytes:
    """Validate and frame one message for the wire."""
    validate_message(msg)
    try:
        payload = json.dumps(_plain(msg), sort_keys=True,
                             separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise ProtocolError(f"unserializable message: {exc}") from exc
    data = payload.encode("utf-8")
    if len(data) > MAX_FRAME:
        raise ProtocolError(f"message of {len(data)} bytes exceeds the "
                            f"{MAX_FRAME} byte frame limit")
    return b"%d\n%s" % (len(data), data)


class MessageReader:
    """Incremental decoder for the length-delimited stream.

    feed() accepts arbitrary byte chunks and returns every message
    completed so far; partial frames wait for more input. Malformed
    input raises ProtocolError and poisons the reader.
    """

    def __init__(self):
        self._buf = bytearray()
        self._dead = False

    def feed(self, data: bytes) -> list[dict]:
        if self._dead:
            raise ProtocolError("reader already failed; reset the connection")
        self._buf.extend(data)
        out = []
        try:
            while True:
                msg = self._next()
                if msg is None:
                    break
                out.append(msg)
        except ProtocolError:
            self._dead = True
            raise
        return out

    def _next(self) -> dict | None:
        nl = self._buf.find(b"\n", 0, MAX_HEADER_DIGITS + 1)
        if nl < 0:
            if len(self._buf) > MAX_HEADER_DIGITS:
                raise ProtocolError("frame header missing length prefix")
            return None
        header = bytes(self._buf[:nl])
        if not header.isdigit():
            raise ProtocolError(f"bad frame length {header!r}")
        length = int(header)
        if length > MAX_FRAME:
            raise ProtocolError(f"frame of {length} bytes exceeds the "
                                f"{MAX_FRAME} byte limit")
        end = nl + 1 + length
        if len(self._buf) < end:
            return None
        raw = bytes(self._buf[nl + 1:end])
        del self._buf[:end]
        try:
            msg = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"unparseable frame: {exc}") from exc
        validate_message(msg)
        return msg


def validate_message(msg) -> None:
    """Check the outer envelope; deep-checks command payloads."""
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    kind = msg.get("type")
    if kind not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {kind!r}")
    missing = _ENVELOPE_KEYS[kind] - msg.keys()
    if missing:
        raise ProtocolError(
            f"{kind} message missing {sorted(missing)}")
    if kind == "command":
        if not isinstance(msg["seq"], int) or isinstance(msg["seq"], bool) \
                or msg["seq"] < 0:
            raise ProtocolError("command seq must be a non-negative integer")
        problem = validate_command(msg["command"])
        if problem:
            raise ProtocolError(problem)


def _num(value) -> bool:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False
    return bool(np.isfinite(value))


def validate_command(cmd) -> str | None:
    """Shape-check one operator command; returns a problem description
    or None. Mirrored by every client, so keep it strict: unknown keys
    are rejected, numbers must be finite."""
    if not isinstance(cmd, dict):
        return "command must be an object"
    kind = cmd.get("type")
    if kind not in COMMAND_KEYS:
        return f"unknown command type {kind!r}"
    extra = cmd.keys() - COMMAND_KEYS[kind] - {"type"}
    if extra:
        return f"{kind} does not take {sorted(extra)}"
    if kind in ("set_mode", "set_accel", "manipulate", "sketch_submit",
                "switch_master", "assign_framing"):
        if not isinstance(cmd.get("drone"), str):
            return f"{kind} needs a drone ident"
    if kind == "pause":
        if "paused" in cmd and not isinstance(cmd["paused"], bool):
            return "paused must be a boolean"
    elif kind == "set_mode":
        if cmd.get("mode") not in ("framing", "sketch", "hold"):
            return f"unknown mode {cmd.get('mode')!r}"
    elif kind == "set_accel":
        if not _num(cmd.get("accel")):
            return "accel must be a finite number"
    elif kind == "manipulate":
        return _check_manipulate(cmd)
    elif kind == "sketch_submit":
        return _check_sketch(cmd)
    elif kind == "assign_framing":
        if not isinstance(cmd.get("framing"), str):
            return "assign_framing needs a framing name"
    return None


def _check_manipulate(cmd: dict) -> str | None:
    mode = cmd.get("mode")
    fields = {"view": ("dx", "dy"), "position": ("dx", "dy"),
              "dolly": ("dz",), "world": ("delta",)}
    if mode not in fields:
        return f"unknown manipulate mode {mode!r}"
    allowed = set(fields[mode]) | {"drone", "mode", "type"}
    if mode == "world":
        allowed.add("axis")
        axis = cmd.get("axis", 0)
        if isinstance(axis, bool) or not isinstance(axis, int) \
                or not 0 <= axis <= 2:
            return "world move axis must be 0, 1 or 2"
    extra = cmd.keys() - allowed
    if extra:
        return f"manipulate {mode} does not take {sorted(extra)}"
    for key in fields[mode]:
        if key in cmd and not _num(cmd[key]):
            return f"{key} must be a finite number"
    return None


def _check_sketch(cmd: dict) -> str | None:
    points = cmd.get("points")
    if not isinstance(points, list) or len(points) < 2:
        return "sketch needs a list of at least two points"
    flat = False
    for pt in points:
        if not isinstance(pt, list) or len(pt) not in (2, 3) \
                or not all(_num(v) for v in pt):
            return "sketch points must be [x, y] or [x, y, z]"
        flat = flat or len(pt) == 2
    heights = cmd.get("heights")
    if heights is not None:
        if _num(heights):
            return None
        if not isinstance(heights, list) or len(heights) != len(points) \
                or not all(_num(h) for h in heights):
            return "heights must be one number or one per point"
    elif flat:
        return "2D sketch points need heights"
    return None


# -- server-side message builders ----------------------------------------


def hello_message(sim) -> dict:
    sc = sim.scenario
    p = sc.params
    obstacles = []
    for o in sc.obstacles:
        row = {"ident": o.ident, "kind": o.kind}
        if o.kind == "sphere":
            row["radius"] = o.radius
        else:
            row["half_extents"] = [float(v) for v in o.half_extents]
        obstacles.append(row)
    return {
        "type": "hello",
        "protocol": PROTOCOL_VERSION,
        "scenario": sc.name,
        "dt": p.dt,
        "tick": sim.tick_index,
        "time": sim.time,
        "bounds": {"lo": [float(v) for v in sc.bounds.lo],
                   "hi": [float(v) for v in sc.bounds.hi]},
        "params": {"d_s": p.d_s, "vmax": p.vmax, "amax": p.amax,
                   "min_separation": p.min_separation,
                   "fov_diag_deg": p.fov_diag_deg,
                   "tilt_range": list(p.tilt_range)},
        "framings": sorted(sim._by_name),
        "drones": [{"ident": d, "role": sim.drones[d].role}
                   for d in sorted(sim.drones)],
        "targets": [t.ident for t in sc.targets],
        "static_boxes": [{"lo": [float(v) for v in b.lo],
                          "hi": [float(v) for v in b.hi]}
                         for b in sc.static_boxes],
        "obstacles": obstacles,
    }


def _vec(a) -> list:
    return [float(v) for v in a]


def _spline_points(rt) -> list:
    if rt.table is None:
        return []
    pos = rt.table.positions
    if len(pos) > SPLINE_WIRE_POINTS:
        idx = np.round(np.linspace(0, len(pos) - 1,
                                   SPLINE_WIRE_POINTS)).astype(int)
        pos = pos[idx]
    return [_vec(p) for p in pos]


def _target_rows(sim) -> list:
    return [{"ident": spec.ident, "position": _vec(tgt.position),
             "yaw": float(tgt.orientation[2])}
            for tgt, spec in zip(sim.targets, sim.scenario.targets)]


def _obstacle_rows(sim) -> list:
    return [{"ident": o.ident,
             "position": _vec(o.script.position_at(sim.time))}
            for o in sim.scenario.obstacles]


def snapshot_message(sim) -> dict:
    drones = []
    for ident in sorted(sim.drones):
        rt = sim.drones[ident]
        s = rt.state
        drones.append({
            "ident": ident,
            "role": rt.role,
            "mode": rt.mode,
            "framing": rt.framing_name,
            "position": _vec(s.position),
            "velocity": _vec(s.velocity),
            "yaw": float(s.yaw),
            "tilt": float(s.gimbal),
            "u": float(s.u),
            "speed": float(rt.speed),
            "accel": float(rt.accel),
            "tracking_error": float(rt.tracking_error),
            "destination": None if rt.destination is None
                           else _vec(rt.destination),
            "dts": None if rt.dts is None else [float(v) for v in rt.dts],
            "path": [] if rt.plan_positions is None
                    else [_vec(p) for p in rt.plan_positions],
            "spline": _spline_points(rt),
            "sketch": None if rt.sketch is None
                      else [_vec(p) for p in rt.sketch],
        })
    master = sim.assignment.master if sim.assignment is not None else None
    return {
        "type": "state_snapshot",
        "tick": sim.tick_index,
        "time": sim.time,
        "paused": sim.paused,
        "master": master,
        "drones": drones,
        "targets": _target_rows(sim),
        "obstacles": _obstacle_rows(sim),
        "conflicts": [{"kind": c.kind.value, "drones": list(c.drones),
                       "hard": c.hard, "value": float(c.value)}
                      for c in sim.current_conflicts],
    }


def delta_message(sim, events: list | None = None) -> dict:
    drones = []
    for ident in sorted(sim.drones):
        rt = sim.drones[ident]
        s = rt.state
        drones.append({
            "ident": ident,
            "mode": rt.mode,
            "position": _vec(s.position),
            "velocity": _vec(s.velocity),
            "yaw": float(s.yaw),
            "tilt": float(s.gimbal),
            "u": float(s.u),
            "speed": float(rt.speed),
            "tracking_error": float(rt.tracking_error),
        })
    return {
        "type": "state_delta",
        "tick": sim.tick_index,
        "time": sim.time,
        "drones": drones,
        "targets": _target_rows(sim),
        "obstacles": _obstacle_rows(sim),
        "events": _plain(list(events or [])),
    }


def command_message(cmd: dict, seq: int) -> dict:
    return {"type": "command", "seq": seq, "command": cmd}


def ack_message(seq: int, ok: bool, detail: str = "") -> dict:
    return {"type": "ack", "seq": seq, "ok": ok, "detail": detail}


def error_message(detail: str) -> dict:
    return {"type": "error", "detail": detail}
