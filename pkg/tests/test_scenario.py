import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbf_taskstack.errors import ParseError, ValidationError
from cbf_taskstack.kinematics import forward_kinematics
from cbf_taskstack.scenario import (
    SCENARIO_DIR_ENV,
    list_scenarios,
    parse_scenario,
    scenario_from_dict,
    serialize_scenario,
)

BUNDLED = ["conflict_7dof.json", "minimal.json", "protocol_7dof.json", "swap_7dof.json", "tracking_7dof.json"]

TWO_LINK = {
    "robot": {
        "joints": [
            {"type": "revolute", "axis": [0, 0, 1]},
            {"type": "revolute", "axis": [0, 0, 1], "origin": {"xyz": [1.0, 0.0, 0.0]}},
        ],
        "limits": {"lower": [-2.0, -2.0], "upper": [2.0, 2.0]},
    },
    "tasks": [
        {"label": "q", "map": "joint_identity", "barrier": {"type": "joint_box"}, "safety_critical": True},
        {"label": "p", "map": "ee_position", "barrier": {"type": "setpoint", "target": [1.0, 1.0, 0.0]}},
    ],
}


def test_bundled_scenarios_are_listed():
    assert list_scenarios() == BUNDLED


def test_defaults():
    sc = scenario_from_dict(TWO_LINK, "two_link.json")
    assert sc.name == "two_link"
    assert sc.schedule.kappa == 10.0
    assert sc.controller.l == 100.0
    assert sc.dt == 1e-3
    assert sc.controller.insertion_ramp == "row"
    assert sc.schedule.blend == "sequential"
    np.testing.assert_array_equal(sc.initial_q, [0.0, 0.0])
    np.testing.assert_array_equal(sc.tasks[0].barrier.lower, [-2.0, -2.0])


def test_unknown_key_is_rejected():
    data = copy.deepcopy(TWO_LINK)
    data["tasks"][1]["barier"] = {}
    with pytest.raises(ValidationError, match=r"tasks\[1\].*barier"):
        scenario_from_dict(data)


def test_undefined_label_is_named():
    data = copy.deepcopy(TWO_LINK)
    data["schedule"] = {"segments": [{"start": 0.0, "chain": ["p", "ghost"]}]}
    with pytest.raises(ValidationError, match="ghost"):
        scenario_from_dict(data)


def test_all_errors_are_collected():
    data = copy.deepcopy(TWO_LINK)
    data["sim"] = {"dt": -1.0, "horizon": 0.0}
    data["controller"] = {"l": 100.0, "insertion_ramp": "sideways"}
    data["schedule"] = {"insertions": [{"task": "nobody", "time": 1.0}]}
    with pytest.raises(ValidationError) as info:
        scenario_from_dict(data)
    text = "\n".join(info.value.errors)
    assert len(info.value.errors) >= 4
    for fragment in ("sim.dt", "sim.horizon", "sideways", "nobody"):
        assert fragment in text


def test_cyclic_order_is_a_validation_error():
    data = copy.deepcopy(TWO_LINK)
    data["tasks"].append({"label": "r", "map": "ee_position", "barrier": {"type": "setpoint", "target": [0, 1, 0]}})
    data["schedule"] = {"segments": [{"start": 0, "order": [["p", "r"], ["r", "p"]]}]}
    with pytest.raises(ValidationError, match="cycl"):
        scenario_from_dict(data)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "name": "x",\n  "tasks": [,]\n}\n')
    with pytest.raises(ParseError) as info:
        parse_scenario(path)
    assert ":3:" in str(info.value)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    sc = parse_scenario(name)
    data = serialize_scenario(sc)
    again = scenario_from_dict(json.loads(json.dumps(data)))
    assert again == sc
    assert serialize_scenario(again) == data
    q = sc.initial_q + 0.1
    np.testing.assert_array_equal(forward_kinematics(again.robot, q), forward_kinematics(sc.robot, q))


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(BUNDLED),
    st.floats(1e-4, 1e-2),
    st.floats(1.5, 500.0),
    st.floats(1.0, 1e4),
    st.sampled_from(["sequential", "entrywise", "step"]),
)
def test_round_trip_with_overrides(name, dt, kappa, l, blend):
    sc = parse_scenario(name).with_overrides(dt=dt, kappa=kappa, l=l, blend=blend)
    assert sc.dt == dt and sc.schedule.kappa == kappa and sc.controller.l == l
    assert all(stack.kappa == kappa for _, stack in sc.schedule.segments)
    assert scenario_from_dict(serialize_scenario(sc)) == sc
    assert sc.overrides == {"dt": dt, "kappa": kappa, "l": l, "blend": blend}


def test_scenario_dir_override(tmp_path, monkeypatch):
    (tmp_path / "only.json").write_text(json.dumps(TWO_LINK))
    monkeypatch.setenv(SCENARIO_DIR_ENV, str(tmp_path))
    assert list_scenarios() == ["only.json"]
    assert parse_scenario("only").name == "only"


def test_demo_scenario_structure():
    sc = parse_scenario("protocol_7dof")
    assert sc.labels == ["q", "v", "p"]
    assert [t.safety_critical for t in sc.tasks] == [True, False, False]
    assert sc.horizon == 30.0 and sc.dt == 1e-3
    assert [(r.kind, sc.labels[r.task], r.time) for r in sc.schedule.ramps] == [("insert", "v", 0.0), ("insert", "p", 10.0)]
    starts = [t0 for t0, _ in sc.schedule.segments]
    assert starts == [0.0, 20.0]
    assert sc.schedule.segments[0][1].order == ((1, 2),)
    assert sc.schedule.segments[1][1].order == ((2, 1),)


def test_without_task_drops_references():
    sc = parse_scenario("protocol_7dof").without_task("p")
    assert sc.labels == ["q", "v"]
    assert all(stack.order == () for _, stack in sc.schedule.segments)
    assert [sc.labels[r.task] for r in sc.schedule.ramps] == ["v"]
