"""Tests for scene-file parsing, strict validation, and tabular writers."""

import json

import numpy as np
import pytest

from intentsim.sceneio import (
    SchemaError,
    agents_at,
    load_ego_controls,
    load_scenes,
    parse_scene_record,
    scene_to_record,
    write_eval_table,
    write_predictions,
    write_scenes,
)


def minimal_record(scene_id="s0"):
    return {
        "schema_version": 1,
        "id": scene_id,
        "hz": 2,
        "map": {
            "drivable": [[[-50.0, -5.0], [50.0, -5.0], [50.0, 5.0], [-50.0, 5.0]]],
            "lanes": [[[-50.0, 0.0], [0.0, 0.0], [50.0, 0.0]]],
        },
        "steps": [
            {"t": 0.0, "agents": [
                {"id": "ego", "kind": "ego",
                 "x": 0.0, "y": 0.0, "theta": 0.0, "v": 5.0},
                {"id": "w", "kind": "pedestrian",
                 "x": 3.0, "y": 4.0, "theta": 1.5, "v": 1.2}]},
            {"t": 0.5, "agents": [
                {"id": "ego", "kind": "ego",
                 "x": 2.5, "y": 0.0, "theta": 0.0, "v": 5.0},
                {"id": "w", "kind": "pedestrian",
                 "x": 3.0, "y": 4.6, "theta": 1.5, "v": 1.2}]},
        ],
    }


def variant(**edits):
    """Deep copy of the minimal record with dotted-path edits applied."""
    rec = minimal_record()
    for path, value in edits.items():
        node = rec
        keys = path.split(".")
        for k in keys[:-1]:
            node = node[int(k)] if k.isdigit() else node[k]
        last = keys[-1]
        node[int(last) if last.isdigit() else last] = value
    return rec


class TestParse:
    def test_minimal_record_parses(self):
        scene = parse_scene_record(minimal_record(), 1)
        assert scene.scene_id == "s0"
        assert scene.hz == 2.0 and scene.dt == 0.5
        assert len(scene.steps) == 2
        assert scene.ego_id() == "ego"
        assert scene.agent_ids() == ["ego", "w"]
        ped = scene.steps[1].get("w")
        assert ped.kind == "pedestrian"
        assert (ped.state.x, ped.state.y) == (3.0, 4.6)
        assert scene.steps[0].get("nobody") is None

    def test_integer_coordinates_coerce_to_float(self):
        rec = variant(**{"steps.0.agents.0.x": 3})
        scene = parse_scene_record(rec, 1)
        x = scene.steps[0].get("ego").state.x
        assert isinstance(x, float) and x == 3.0

    def test_to_record_is_a_fixpoint(self):
        rec = minimal_record()
        assert scene_to_record(parse_scene_record(rec, 1)) == rec

    def test_unknown_top_level_field(self):
        with pytest.raises(SchemaError, match=r"line 3: unknown field\(s\) \['wind'\]"):
            parse_scene_record(variant(wind=3), 3)

    def test_unknown_map_field(self):
        with pytest.raises(SchemaError, match=r"unknown field\(s\) \['crosswalks'\] in map"):
            parse_scene_record(variant(**{"map.crosswalks": []}), 1)

    def test_unknown_step_and_agent_fields(self):
        with pytest.raises(SchemaError, match=r"\['note'\] in step"):
            parse_scene_record(variant(**{"steps.0.note": "hi"}), 1)
        with pytest.raises(SchemaError, match=r"\['color'\] in agent"):
            parse_scene_record(variant(**{"steps.0.agents.0.color": "red"}), 1)

    def test_missing_field_names_the_slot(self):
        rec = minimal_record()
        del rec["hz"]
        with pytest.raises(SchemaError, match="line 7: missing field 'hz'"):
            parse_scene_record(rec, 7)

    def test_unsupported_schema_version(self):
        with pytest.raises(SchemaError, match="unsupported schema_version 2"):
            parse_scene_record(variant(schema_version=2), 1)

    def test_hz_must_be_two(self):
        with pytest.raises(SchemaError, match="hz must be exactly 2, got 10"):
            parse_scene_record(variant(hz=10), 1)

    def test_empty_scene_id(self):
        with pytest.raises(SchemaError, match="non-empty string"):
            parse_scene_record(variant(id=""), 1)

    def test_timestamps_must_advance_by_half_second(self):
        with pytest.raises(SchemaError, match="timestamps must advance by 0.5"):
            parse_scene_record(variant(**{"steps.1.t": 1.0}), 1)
        with pytest.raises(SchemaError, match="timestamps must advance"):
            parse_scene_record(variant(**{"steps.1.t": 0.0}), 1)
        # a nanosecond of slack is fine
        parse_scene_record(variant(**{"steps.1.t": 0.5000000001}), 1)

    def test_bool_is_not_a_number(self):
        with pytest.raises(SchemaError, match="'x' must be a number"):
            parse_scene_record(variant(**{"steps.0.agents.0.x": True}), 1)
        with pytest.raises(SchemaError, match="t must be a number"):
            parse_scene_record(variant(**{"steps.0.t": False}), 1)

    def test_negative_speed_rejected(self):
        with pytest.raises(SchemaError, match="negative speed"):
            parse_scene_record(variant(**{"steps.0.agents.1.v": -0.1}), 1)

    def test_unknown_agent_kind(self):
        with pytest.raises(SchemaError, match="unknown agent kind 'bus'"):
            parse_scene_record(variant(**{"steps.0.agents.0.kind": "bus"}), 1)

    def test_at_most_one_ego_per_step(self):
        with pytest.raises(SchemaError, match="more than one ego"):
            parse_scene_record(variant(**{"steps.0.agents.1.kind": "ego"}), 1)

    def test_duplicate_agent_ids_within_a_step(self):
        with pytest.raises(SchemaError, match="duplicate agent ids"):
            parse_scene_record(variant(**{"steps.0.agents.1.id": "ego",
                                          "steps.0.agents.1.kind": "vehicle"}), 1)

    def test_steps_must_be_nonempty(self):
        with pytest.raises(SchemaError, match="steps must be a non-empty list"):
            parse_scene_record(variant(steps=[]), 1)

    def test_bad_map_geometry_is_wrapped_with_the_line(self):
        rec = variant(**{"map.drivable": [[[0.0, 0.0], [1.0, 0.0]]]})
        with pytest.raises(SchemaError, match=r"line 9: drivable polygon"):
            parse_scene_record(rec, 9)

    def test_malformed_points(self):
        with pytest.raises(SchemaError, match=r"\[x, y\] numbers"):
            parse_scene_record(variant(**{"map.lanes.0.1": [1.0]}), 1)
        with pytest.raises(SchemaError, match="non-empty point list"):
            parse_scene_record(variant(**{"map.lanes.0": []}), 1)

    def test_agent_entry_must_be_object(self):
        with pytest.raises(SchemaError, match="agent entry must be an object"):
            parse_scene_record(variant(**{"steps.0.agents.0": [1, 2]}), 1)


class TestLoadScenes:
    def write(self, tmp_path, lines):
        path = tmp_path / "corpus.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def test_blank_lines_are_skipped(self, tmp_path):
        lines = [json.dumps(minimal_record("a")), "",
                 json.dumps(minimal_record("b")), "   "]
        scenes = load_scenes(self.write(tmp_path, lines))
        assert [s.scene_id for s in scenes] == ["a", "b"]

    def test_invalid_json_carries_line_number(self, tmp_path):
        lines = [json.dumps(minimal_record("a")), "{not json"]
        with pytest.raises(SchemaError, match="line 2: invalid JSON"):
            load_scenes(self.write(tmp_path, lines))

    def test_schema_error_carries_line_number(self, tmp_path):
        bad = minimal_record("b")
        bad["hz"] = 4
        lines = [json.dumps(minimal_record("a")), "", json.dumps(bad)]
        with pytest.raises(SchemaError, match="line 3: hz must be exactly 2"):
            load_scenes(self.write(tmp_path, lines))

    def test_duplicate_scene_ids_rejected(self, tmp_path):
        lines = [json.dumps(minimal_record("a")), json.dumps(minimal_record("a"))]
        with pytest.raises(SchemaError, match="duplicate scene id 'a'"):
            load_scenes(self.write(tmp_path, lines))

    def test_empty_file_rejected(self, tmp_path):
        path = self.write(tmp_path, [""])
        with pytest.raises(SchemaError, match="no scene records found"):
            load_scenes(path)

    def test_write_then_load_round_trips(self, tmp_path):
        scenes = [parse_scene_record(minimal_record(i), 1) for i in ("a", "b")]
        path = tmp_path / "out.jsonl"
        write_scenes(path, scenes)
        back = load_scenes(path)
        assert [scene_to_record(s) for s in back] == [scene_to_record(s) for s in scenes]

    def test_written_lines_are_compact_json(self, tmp_path):
        path = tmp_path / "out.jsonl"
        write_scenes(path, [parse_scene_record(minimal_record(), 1)])
        text = path.read_text(encoding="utf-8")
        assert text.endswith("\n") and text.count("\n") == 1
        assert ": " not in text and ", " not in text


class TestAgentsAt:
    def test_intentions_by_kind(self):
        scene = parse_scene_record(minimal_record(), 1)
        agents = agents_at(scene, 0, 81)
        by_id = {a.agent_id: a for a in agents}
        assert set(by_id) == {"ego", "w"}
        ego_p = by_id["ego"].intention.p
        assert np.allclose(ego_p, 1.0 / 81)
        ped_p = by_id["w"].intention.p
        assert ped_p[40] == 1.0 and ped_p.sum() == 1.0  # center of the 9x9 grid

    def test_states_copy_the_step(self):
        scene = parse_scene_record(minimal_record(), 1)
        a = {x.agent_id: x for x in agents_at(scene, 1, 81)}["w"]
        assert (a.state.x, a.state.y, a.state.v) == (3.0, 4.6, 1.2)
        assert a.kind == "pedestrian"


class TestEgoControls:
    def test_valid_plan(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps([[1.0, 0.0], [-2, 0.05]]), encoding="utf-8")
        plan = load_ego_controls(path)
        assert [(u.a, u.omega) for u in plan] == [(1.0, 0.0), (-2.0, 0.05)]
        assert all(isinstance(u.a, float) for u in plan)

    def test_not_a_list(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text("{}", encoding="utf-8")
        with pytest.raises(SchemaError, match="non-empty list"):
            load_ego_controls(path)
        path.write_text("[]", encoding="utf-8")
        with pytest.raises(SchemaError, match="non-empty list"):
            load_ego_controls(path)

    def test_bad_entry_is_indexed(self, tmp_path):
        path = tmp_path / "plan.json"
        path.write_text(json.dumps([[1.0, 0.0], [1.0], [0.0, 0.0]]),
                        encoding="utf-8")
        with pytest.raises(SchemaError, match=r"entry 1 is not an \[a, omega\] pair"):
            load_ego_controls(path)
        path.write_text(json.dumps([[1.0, True]]), encoding="utf-8")
        with pytest.raises(SchemaError, match="entry 0"):
            load_ego_controls(path)


class TestWriters:
    def test_predictions_format(self, tmp_path):
        path = tmp_path / "pred.csv"
        write_predictions(path, [
            ("s0", "ego", "ml", 1, 1.23456789, -2.0),
            ("s0", "ego", 0, 2, 0.0, 0.5),
        ])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines == [
            "scene_id,agent_id,sample_id,step,x,y",
            "s0,ego,ml,1,1.234568,-2.000000",
            "s0,ego,0,2,0.000000,0.500000",
        ]

    def test_eval_table_format(self, tmp_path):
        path = tmp_path / "eval.csv"
        write_eval_table(path, [
            {"case": "unconditional", "method": "const_vel", "horizon_s": 1.0,
             "ade": 0.123456, "fde": 2.0},
            {"case": "conditional", "method": "sampled_min5", "horizon_s": 2.5,
             "ade": None, "fde": None},
        ])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines == [
            "case,method,horizon_s,ade,fde",
            "unconditional,const_vel,1,0.1235,2.0000",
            "conditional,sampled_min5,2.5,,",
        ]
