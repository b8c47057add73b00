import json

import numpy as np
import pytest

from cinedrone.protocol import (
    MAX_FRAME,
    MessageReader,
    ProtocolError,
    SPLINE_WIRE_POINTS,
    ack_message,
    command_message,
    delta_message,
    encode_message,
    error_message,
    hello_message,
    snapshot_message,
    validate_command,
    validate_message,
)
from cinedrone.scenario import parse_scenario
from cinedrone.simulation import Simulation


def msg(seq=0, **cmd):
    return command_message(cmd, seq)


class TestFraming:
    def test_round_trip(self):
        m = ack_message(3, True, "queued")
        reader = MessageReader()
        out = reader.feed(encode_message(m))
        assert out == [m]

    def test_byte_by_byte(self):
        m = msg(seq=7, type="step")
        data = encode_message(m)
        reader = MessageReader()
        seen = []
        for i in range(len(data)):
            seen += reader.feed(data[i:i + 1])
        assert seen == [m]

    def test_many_frames_one_chunk(self):
        frames = [error_message(f"e{i}") for i in range(5)]
        blob = b"".join(encode_message(f) for f in frames)
        assert MessageReader().feed(blob) == frames

    def test_partial_then_rest(self):
        data = encode_message(ack_message(1, False, "nope"))
        reader = MessageReader()
        assert reader.feed(data[:4]) == []
        assert len(reader.feed(data[4:])) == 1

    def test_header_not_digits(self):
        with pytest.raises(ProtocolError, match="bad frame length"):
            MessageReader().feed(b"12a\n{}")

    def test_header_never_terminates(self):
        with pytest.raises(ProtocolError, match="length prefix"):
            MessageReader().feed(b"9" * 64)

    def test_oversize_frame_rejected(self):
        header = str(MAX_FRAME + 1).encode() + b"\n"
        with pytest.raises(ProtocolError, match="exceeds"):
            MessageReader().feed(header)

    def test_garbage_payload(self):
        with pytest.raises(ProtocolError, match="unparseable"):
            MessageReader().feed(b"4\n{{{{")

    def test_non_object_payload(self):
        with pytest.raises(ProtocolError, match="JSON object"):
            MessageReader().feed(b"7\n[1,2,3]")

    def test_unknown_type(self):
        raw = json.dumps({"type": "telemetry"}).encode()
        frame = str(len(raw)).encode() + b"\n" + raw
        with pytest.raises(ProtocolError, match="unknown message type"):
            MessageReader().feed(frame)

    def test_reader_poisoned_after_error(self):
        reader = MessageReader()
        with pytest.raises(ProtocolError):
            reader.feed(b"x\n")
        with pytest.raises(ProtocolError, match="reset"):
            reader.feed(encode_message(error_message("ok")))

    def test_nan_rejected(self):
        bad = {"type": "error", "detail": "x", "value": float("nan")}
        with pytest.raises(ProtocolError, match="unserializable"):
            encode_message(bad)

    def test_numpy_values_encode(self):
        m = {"type": "state_delta", "tick": np.int64(3),
             "time": np.float64(0.06), "drones": [],
             "targets": [], "obstacles": [],
             "events": [{"pos": np.arange(3.0)}]}
        out = MessageReader().feed(encode_message(m))[0]
        assert out["tick"] == 3
        assert out["events"][0]["pos"] == [0.0, 1.0, 2.0]

    def test_stable_bytes(self):
        m = snapshot = {"type": "ack", "seq": 1, "ok": True, "detail": "d"}
        assert encode_message(m) == encode_message(dict(reversed(
            list(snapshot.items()))))


class TestEnvelope:
    def test_command_needs_seq_and_body(self):
        with pytest.raises(ProtocolError, match="missing"):
            validate_message({"type": "command", "seq": 0})
        with pytest.raises(ProtocolError, match="seq"):
            validate_message({"type": "command", "seq": -1,
                              "command": {"type": "step"}})
        with pytest.raises(ProtocolError, match="seq"):
            validate_message({"type": "command", "seq": True,
                              "command": {"type": "step"}})

    def test_command_body_checked(self):
        with pytest.raises(ProtocolError, match="unknown command"):
            validate_message(msg(type="warp"))

    def test_ack_fields(self):
        with pytest.raises(ProtocolError, match="missing"):
            validate_message({"type": "ack", "seq": 0})
        validate_message(ack_message(0, True))

    def test_not_a_dict(self):
        with pytest.raises(ProtocolError):
            validate_message(["type", "hello"])


class TestCommandSchema:
    @pytest.mark.parametrize("cmd", [
        {"type": "pause"},
        {"type": "pause", "paused": False},
        {"type": "step"},
        {"type": "set_mode", "drone": "d1", "mode": "hold"},
        {"type": "set_accel", "drone": "d1", "accel": -2.5},
        {"type": "manipulate", "drone": "d1", "mode": "view",
         "dx": 0.2, "dy": -0.1},
        {"type": "manipulate", "drone": "d1", "mode": "position", "dx": 1.0},
        {"type": "manipulate", "drone": "d1", "mode": "dolly", "dz": 0.4},
        {"type": "manipulate", "drone": "d1", "mode": "world",
         "axis": 2, "delta": 0.5},
        {"type": "sketch_submit", "drone": "d1",
         "points": [[0, 0, 1], [1, 1, 1]]},
        {"type": "sketch_submit", "drone": "d1",
         "points": [[0, 0], [1, 1]], "heights": 1.5},
        {"type": "sketch_submit", "drone": "d1",
         "points": [[0, 0], [1, 1, 2]], "heights": [1.0, 2.0]},
        {"type": "switch_master", "drone": "d1"},
        {"type": "assign_framing", "drone": "d1", "framing": "front-medium"},
    ])
    def test_valid(self, cmd):
        assert validate_command(cmd) is None

    @pytest.mark.parametrize("cmd,why", [
        ({"type": "warp", "drone": "d1"}, "unknown command"),
        ({"type": "set_mode", "mode": "hold"}, "drone"),
        ({"type": "set_mode", "drone": 3, "mode": "hold"}, "drone"),
        ({"type": "set_mode", "drone": "d1", "mode": "chase"}, "mode"),
        ({"type": "set_accel", "drone": "d1", "accel": float("inf")},
         "finite"),
        ({"type": "set_accel", "drone": "d1", "accel": True}, "finite"),
        ({"type": "set_accel", "drone": "d1"}, "finite"),
        ({"type": "pause", "paused": 1}, "boolean"),
        ({"type": "pause", "extra": 1}, "does not take"),
        ({"type": "manipulate", "drone": "d1", "mode": "spin"},
         "manipulate mode"),
        ({"type": "manipulate", "drone": "d1", "mode": "view", "dz": 1.0},
         "does not take"),
        ({"type": "manipulate", "drone": "d1", "mode": "dolly", "dx": 1.0},
         "does not take"),
        ({"type": "manipulate", "drone": "d1", "mode": "world", "axis": 3},
         "axis"),
        ({"type": "manipulate", "drone": "d1", "mode": "world",
          "axis": True}, "axis"),
        ({"type": "manipulate", "drone": "d1", "mode": "view",
          "dx": float("nan")}, "finite"),
        ({"type": "sketch_submit", "drone": "d1", "points": [[0, 0, 1]]},
         "two points"),
        ({"type": "sketch_submit", "drone": "d1", "points": "abc"},
         "two points"),
        ({"type": "sketch_submit", "drone": "d1",
          "points": [[0, 0, 1, 4], [1, 1, 1]]}, "x, y"),
        ({"type": "sketch_submit", "drone": "d1",
          "points": [[0, "a", 1], [1, 1, 1]]}, "x, y"),
        ({"type": "sketch_submit", "drone": "d1",
          "points": [[0, 0], [1, 1]]}, "heights"),
        ({"type": "sketch_submit", "drone": "d1",
          "points": [[0, 0], [1, 1]], "heights": [1.0]}, "per point"),
        ({"type": "assign_framing", "drone": "d1"}, "framing"),
        ({"type": "switch_master", "drone": "d1", "force": True},
         "does not take"),
        ("step", "must be an object"),
    ])
    def test_invalid(self, cmd, why):
        problem = validate_command(cmd)
        assert problem is not None and why in problem


SCENE = {
    "schema_version": 1,
    "name": "protocol-probe",
    "bounds": {"lo": [0, 0, 0], "hi": [10, 8, 4]},
    "params": {"d_s": 1.2, "seed": 3, "roadmap_max_spheres": 150},
    "static_boxes": [{"lo": [4.0, 0.0, 0.0], "hi": [5.0, 2.5, 4.0]}],
    "targets": [{"ident": "actor", "position": [8.0, 4.0, 1.1],
                 "yaw": 1.5707963}],
    "obstacles": [{"ident": "cart", "kind": "sphere", "radius": 0.4,
                   "position": [2.0, 6.5, 1.0],
                   "waypoints": [{"t": 0.0, "position": [2.0, 6.5, 1.0]},
                                 {"t": 4.0, "position": [3.5, 6.5, 1.0]}]}],
    "drones": [{"ident": "cam", "role": "master", "position": [1.5, 4.0, 1.5],
                "framing": "front-medium"}],
}


@pytest.fixture(scope="module")
def sim():
    s = Simulation(parse_scenario(json.dumps(SCENE)))
    s.run(10)
    return s


class TestBuilders:
    def test_hello_shape(self, sim):
        h = hello_message(sim)
        assert h["protocol"] == 1
        assert h["scenario"] == "protocol-probe"
        assert h["dt"] == pytest.approx(0.02)
        assert h["drones"] == [{"ident": "cam", "role": "master"}]
        assert h["targets"] == ["actor"]
        assert h["obstacles"][0] == {"ident": "cart", "kind": "sphere",
                                     "radius": 0.4}
        assert "front-medium" in h["framings"]
        assert len(h["static_boxes"]) == 1
        MessageReader().feed(encode_message(h))

    def test_snapshot_shape(self, sim):
        s = snapshot_message(sim)
        assert s["tick"] == 10
        assert s["master"] == "cam"
        d = s["drones"][0]
        assert d["ident"] == "cam"
        assert d["framing"] == "front-medium"
        assert len(d["position"]) == 3
        assert len(d["path"]) >= 2
        assert 2 <= len(d["spline"]) <= SPLINE_WIRE_POINTS
        assert d["sketch"] is None
        assert s["targets"][0]["ident"] == "actor"
        assert s["obstacles"][0]["ident"] == "cart"
        decoded = MessageReader().feed(encode_message(s))[0]
        assert decoded == json.loads(json.dumps(s))

    def test_delta_shape(self, sim):
        d = delta_message(sim, events=[{"tick": 1, "kind": "replan"}])
        assert d["tick"] == 10
        assert d["events"] == [{"tick": 1, "kind": "replan"}]
        row = d["drones"][0]
        assert set(row) == {"ident", "mode", "position", "velocity", "yaw",
                            "tilt", "u", "speed", "tracking_error"}
        MessageReader().feed(encode_message(d))

    def test_obstacle_tracks_script(self, sim):
        # at t = 0.2 s the cart has moved 0.075 m along +x
        d = delta_message(sim)
        x = d["obstacles"][0]["position"][0]
        assert x == pytest.approx(2.0 + 1.5 * 0.2 / 4.0)

    def test_snapshot_values_match_state(self, sim):
        s = snapshot_message(sim)
        rt = sim.drones["cam"]
        assert s["drones"][0]["position"] == [float(v)
                                              for v in rt.state.position]
        assert s["drones"][0]["u"] == float(rt.state.u)
