"""Scenario schema: strict parsing, script interpolation, round trips."""

import json

import numpy as np
import pytest

from cinedrone.scenario import (
    ScenarioError,
    load_scenario,
    parse_scenario,
    serialize_scenario,
)


def minimal(**over):
    doc = {
        "schema_version": 1,
        "name": "t",
        "bounds": {"lo": [0, 0, 0], "hi": [10, 10, 5]},
        "params": {"d_s": 0.4},
    }
    doc.update(over)
    return doc


def parse(doc):
    return parse_scenario(json.dumps(doc))


class TestStrictness:
    def test_minimal_doc_parses_with_defaults(self):
        sc = parse(minimal())
        assert sc.name == "t"
        assert sc.params.dt == 0.02
        assert sc.params.vmax == 2.0
        assert sc.params.seed == 0
        assert sc.drones == [] and sc.targets == []

    def test_not_json(self):
        with pytest.raises(ScenarioError, match="not valid JSON"):
            parse_scenario("{nope")

    def test_top_level_must_be_object(self):
        with pytest.raises(ScenarioError, match="top level"):
            parse_scenario("[1, 2]")

    def test_unknown_top_level_key(self):
        with pytest.raises(ScenarioError, match="wat: unknown field"):
            parse(minimal(wat=1))

    def test_unknown_param_key(self):
        doc = minimal()
        doc["params"]["speed"] = 3
        with pytest.raises(ScenarioError, match=r"params\.speed"):
            parse(doc)

    def test_wrong_schema_version(self):
        with pytest.raises(ScenarioError, match="schema_version"):
            parse(minimal(schema_version=2))

    def test_missing_d_s(self):
        doc = minimal()
        doc["params"] = {}
        with pytest.raises(ScenarioError,
                           match=r"params\.d_s: required field missing"):
            parse(doc)

    def test_inverted_bounds(self):
        with pytest.raises(ScenarioError, match="bounds"):
            parse(minimal(bounds={"lo": [0, 0, 0], "hi": [-1, 10, 5]}))

    @pytest.mark.parametrize("key,value,frag", [
        ("dt", 0.5, r"params\.dt"),
        ("dt", 0, r"params\.dt"),
        ("d_s", -1, r"params\.d_s"),
        ("vmax", 0, r"params\.vmax"),
        ("fov_diag_deg", 171, r"params\.fov_diag_deg"),
        ("seed", -1, r"params\.seed"),
        ("window", 0, r"params\.window"),
    ])
    def test_param_range_checks(self, key, value, frag):
        doc = minimal()
        doc["params"][key] = value
        with pytest.raises(ScenarioError, match=frag):
            parse(doc)

    def test_integer_params_reject_floats(self):
        doc = minimal()
        doc["params"]["seed"] = 1.5
        with pytest.raises(ScenarioError, match="integer"):
            parse(doc)

    def test_bool_is_not_a_number(self):
        doc = minimal()
        doc["params"]["vmax"] = True
        with pytest.raises(ScenarioError, match="number"):
            parse(doc)


class TestScripts:
    def walker(self):
        return parse(minimal(targets=[{
            "ident": "a", "position": [1, 1, 1], "yaw": 0.5,
            "waypoints": [
                {"t": 0.0, "position": [1, 1, 1]},
                {"t": 2.0, "position": [3, 1, 1], "yaw": 1.5},
                {"t": 4.0, "position": [3, 5, 1]},
            ],
        }])).targets[0].script

    def test_linear_interpolation(self):
        s = self.walker()
        assert np.allclose(s.position_at(1.0), [2, 1, 1])
        assert np.allclose(s.position_at(3.0), [3, 3, 1])

    def test_holds_at_both_ends(self):
        s = self.walker()
        assert np.allclose(s.position_at(-5.0), [1, 1, 1])
        assert np.allclose(s.position_at(99.0), [3, 5, 1])

    def test_yaw_carries_forward(self):
        s = self.walker()
        assert s.yaw_at(0.0) == pytest.approx(0.5)
        assert s.yaw_at(2.0) == pytest.approx(1.5)
        # unspecified yaw on the last row repeats the previous one
        assert s.yaw_at(4.0) == pytest.approx(1.5)

    def test_no_waypoints_means_static(self):
        sc = parse(minimal(targets=[{"ident": "a", "position": [2, 2, 1]}]))
        s = sc.targets[0].script
        assert np.allclose(s.position_at(0.0), [2, 2, 1])
        assert np.allclose(s.position_at(50.0), [2, 2, 1])

    def test_times_must_increase(self):
        with pytest.raises(ScenarioError, match="strictly increasing"):
            parse(minimal(targets=[{
                "ident": "a", "position": [1, 1, 1],
                "waypoints": [{"t": 1.0, "position": [1, 1, 1]},
                              {"t": 1.0, "position": [2, 1, 1]}],
            }]))

    def test_negative_time_rejected(self):
        with pytest.raises(ScenarioError, match=">= 0"):
            parse(minimal(targets=[{
                "ident": "a", "position": [1, 1, 1],
                "waypoints": [{"t": -1.0, "position": [1, 1, 1]},
                              {"t": 1.0, "position": [2, 1, 1]}],
            }]))


class TestObstacles:
    def test_sphere_motion(self):
        sc = parse(minimal(obstacles=[{
            "ident": "ball", "kind": "sphere", "radius": 0.5,
            "position": [1, 1, 1],
            "waypoints": [{"t": 0, "position": [1, 1, 1]},
                          {"t": 2, "position": [5, 1, 1]}],
        }]))
        ob = sc.obstacles_at(1.0)[0]
        assert ob.distance(np.array([3.0, 1.0, 1.0])) == pytest.approx(-0.5)

    def test_box_half_extents(self):
        sc = parse(minimal(obstacles=[{
            "ident": "crate", "kind": "box", "half_extents": [1, 2, 0.5],
            "position": [5, 5, 1],
        }]))
        ob = sc.obstacles_at(0.0)[0]
        assert ob.distance(np.array([5.0, 5.0, 1.0])) == 0.0
        assert ob.distance(np.array([7.0, 5.0, 1.0])) == pytest.approx(1.0)

    def test_unknown_kind(self):
        with pytest.raises(ScenarioError, match="unknown kind"):
            parse(minimal(obstacles=[{"ident": "x", "kind": "cone",
                                      "position": [1, 1, 1]}]))

    def test_sphere_needs_positive_radius(self):
        with pytest.raises(ScenarioError, match="radius"):
            parse(minimal(obstacles=[{"ident": "x", "kind": "sphere",
                                      "radius": 0, "position": [1, 1, 1]}]))


class TestFleet:
    def test_exactly_one_master(self):
        with pytest.raises(ScenarioError, match="exactly one master"):
            parse(minimal(drones=[
                {"ident": "d1", "role": "slave", "position": [1, 1, 1]},
            ]))
        with pytest.raises(ScenarioError, match="exactly one master"):
            parse(minimal(drones=[
                {"ident": "d1", "role": "master", "position": [1, 1, 1]},
                {"ident": "d2", "role": "master", "position": [5, 5, 1]},
            ]))

    def test_duplicate_idents_across_kinds(self):
        with pytest.raises(ScenarioError, match="duplicate ident"):
            parse(minimal(
                targets=[{"ident": "x", "position": [2, 2, 1]}],
                drones=[{"ident": "x", "role": "master",
                         "position": [5, 5, 1]}],
            ))

    def test_unknown_role(self):
        with pytest.raises(ScenarioError, match="role"):
            parse(minimal(drones=[{"ident": "d", "role": "boss",
                                   "position": [1, 1, 1]}]))


class TestPlacement:
    def test_drone_outside_bounds(self):
        with pytest.raises(ScenarioError, match="outside scene bounds"):
            parse(minimal(drones=[{"ident": "d", "role": "master",
                                   "position": [50, 1, 1]}]))

    def test_drone_inside_static_box(self):
        with pytest.raises(ScenarioError, match="static box"):
            parse(minimal(
                static_boxes=[{"lo": [4, 4, 0], "hi": [6, 6, 3]}],
                drones=[{"ident": "d", "role": "master",
                         "position": [5, 5, 1]}],
            ))

    def test_drone_inside_obstacle_at_start(self):
        with pytest.raises(ScenarioError, match="obstacle at t=0"):
            parse(minimal(
                obstacles=[{"ident": "ball", "kind": "sphere",
                            "radius": 1.0, "position": [5, 5, 1]}],
                drones=[{"ident": "d", "role": "master",
                         "position": [5.5, 5, 1]}],
            ))

    def test_drone_too_close_to_target(self):
        with pytest.raises(ScenarioError, match="within d_s"):
            parse(minimal(
                targets=[{"ident": "a", "position": [5, 5, 1]}],
                drones=[{"ident": "d", "role": "master",
                         "position": [5.2, 5, 1]}],
            ))

    def test_drones_respect_min_separation(self):
        with pytest.raises(ScenarioError, match="min_separation"):
            parse(minimal(drones=[
                {"ident": "d1", "role": "master", "position": [1, 1, 1]},
                {"ident": "d2", "role": "slave", "position": [1.5, 1, 1]},
            ]))


class TestRoundTrip:
    def full_doc(self):
        return minimal(
            name="full",
            static_boxes=[{"lo": [1, 1, 0], "hi": [2, 2, 2]}],
            targets=[{"ident": "a", "position": [5, 5, 1.2], "yaw": 0.7,
                      "waypoints": [{"t": 0, "position": [5, 5, 1.2]},
                                    {"t": 3, "position": [7, 5, 1.2],
                                     "yaw": 1.1}]}],
            obstacles=[{"ident": "ball", "kind": "sphere", "radius": 0.5,
                        "position": [8, 8, 1]}],
            drones=[{"ident": "cam", "role": "master",
                     "position": [5, 8, 1.5], "framing": "apex-low"}],
        )

    def test_serialize_parse_is_identity(self):
        sc = parse(self.full_doc())
        text = serialize_scenario(sc)
        again = serialize_scenario(parse_scenario(text))
        assert text == again

    def test_semantics_survive_round_trip(self):
        sc1 = parse(self.full_doc())
        sc2 = parse_scenario(serialize_scenario(sc1))
        assert sc2.name == sc1.name
        assert sc2.params.d_s == sc1.params.d_s
        assert np.allclose(sc2.targets[0].script.position_at(1.5),
                           sc1.targets[0].script.position_at(1.5))
        assert sc2.drones[0].framing == "apex-low"

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(self.full_doc()))
        sc = load_scenario(path)
        assert sc.name == "full"
