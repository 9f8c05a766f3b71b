import json
import math

import numpy as np
import pytest

from graspgate import placing, scenes
from graspgate.errors import InfeasibleScenario, ParseError
from graspgate.gripper import GripperSpec
from graspgate.sdf import EnvironmentModel, bake
from graspgate.se3 import translation


def test_presets_generate_with_bounded_sets(suite):
    for task, i in suite.all_presets():
        sc = suite.scene(task, i)
        assert sc.task == task
        assert 1 <= len(sc.placing_set) <= 100
        if task == "slot_insertion":
            assert len(sc.placing_set) == 1
        else:
            assert sc.placing_set.kind == "product"


def test_object_starts_clear_and_placements_fit(suite):
    for task, i in suite.all_presets():
        sc = suite.scene(task, i)
        assert scenes.object_env_clearance(sc.environment, sc.object_shape, sc.x0) > 0
        for p in placing.enumerate_poses(sc.placing_set):
            assert scenes.object_env_clearance(sc.environment, sc.object_shape, p) >= -1e-4


def test_workspace_holds_primitives_with_margin(suite):
    for task, i in suite.all_presets():
        sc = suite.scene(task, i)
        m = scenes.scene_margin(sc)
        for p in sc.environment.primitives:
            assert sc.workspace_bounds.contains(p.aabb().inflate(m))


def test_generation_is_deterministic():
    a = scenes.dumps_scene(scenes.generate_scene(scenes.TaskScenario("shelf_placing", {}, 7)))
    b = scenes.dumps_scene(scenes.generate_scene(scenes.TaskScenario("shelf_placing", {}, 7)))
    c = scenes.dumps_scene(scenes.generate_scene(scenes.TaskScenario("shelf_placing", {}, 8)))
    assert a == b != c


def test_rack_without_occupied_sticks():
    sc = scenes.generate_scene(scenes.TaskScenario("rack_hanging", {"occupied": []}, 3))
    assert scenes.object_env_clearance(sc.environment, sc.object_shape, sc.x0) > 0


def test_occupied_target_is_infeasible():
    with pytest.raises(InfeasibleScenario):
        scenes.generate_scene(scenes.TaskScenario("rack_hanging", {"target": 1, "occupied": [(1, 0.0)]}, 0))


def test_clutter_on_the_base_placement_is_infeasible():
    with pytest.raises(InfeasibleScenario):
        scenes.generate_scene(scenes.TaskScenario("shelf_placing", {"clutter": [(0.0, 0.03, 0.03, 0.03)]}, 0))


@pytest.mark.parametrize("task", scenes.TASKS)
def test_save_load_save_is_byte_identical(tmp_path, task):
    sc = scenes.generate_scene(scenes.preset_scenario(task, 1))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    scenes.save_scene(sc, a)
    scenes.save_scene(scenes.load_scene(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_missing_field_is_named(tmp_path):
    d = scenes.scene_to_dict(scenes.generate_scene(scenes.preset_scenario("slot_insertion", 0)))
    del d["d_safe"]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ParseError, match="d_safe"):
        scenes.load_scene(p)
    d2 = scenes.scene_to_dict(scenes.generate_scene(scenes.preset_scenario("slot_insertion", 0)))
    del d2["object"]["initial_pose"]
    p.write_text(json.dumps(d2))
    with pytest.raises(ParseError, match="initial_pose"):
        scenes.load_scene(p)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{\n  "name": "x",\n  oops\n}')
    with pytest.raises(ParseError, match="line 3"):
        scenes.load_scene(p)


def test_minimal_free_space_scene(tmp_path):
    text = json.dumps({
        "name": "free",
        "environment": [],
        "object": {"shape": [{"kind": "cylinder", "dims": [0.035, 0.045]}],
                   "initial_pose": {"position": [0, 0, 0], "quaternion": [1, 0, 0, 0]}},
        "placing_set": {"kind": "discrete", "members": [{"position": [0.1, 0, 0], "quaternion": [1, 0, 0, 0]}]},
        "gripper": {},
        "workspace_bounds": {"min": [-0.5, -0.5, -0.5], "max": [0.5, 0.5, 0.5]},
        "d_safe": 0.005,
    })
    p = tmp_path / "free.json"
    p.write_text(text)
    sc = scenes.load_scene(p)
    assert sc.environment.free_space and not sc.environment.primitives
    assert sc.gripper == GripperSpec()
    grid = scenes.scene_grid(sc)
    assert np.all(grid.values > 1e300)


def test_moved_clutter_changes_grid_only_nearby():
    base = {"clutter": [(0.115, 0.03, 0.03, 0.04)]}
    moved = {"clutter": [(0.065, 0.03, 0.03, 0.04)]}
    a = scenes.generate_scene(scenes.TaskScenario("shelf_placing", base, 1))
    b = scenes.generate_scene(scenes.TaskScenario("shelf_placing", moved, 1))
    res = a.d_safe / 2
    bounds = a.workspace_bounds.inflate(res)
    ga = bake(a.environment, bounds, res)
    gb = bake(b.environment, bounds, res)
    changed = np.argwhere(ga.values != gb.values)
    assert len(changed)
    pts = ga.origin + changed * res
    box_a, box_b = a.environment.primitives[-1], b.environment.primitives[-1]
    # a node can only change where one of the two boxes is its nearest surface,
    # which here means within the shelf cell around them
    reach = scenes.scene_margin(a) + res
    lo = np.minimum(box_a.aabb().lo, box_b.aabb().lo) - reach
    hi = np.maximum(box_a.aabb().hi, box_b.aabb().hi) + reach
    assert np.all((pts >= lo) & (pts <= hi))
    # and most of the grid is untouched
    assert len(changed) < 0.05 * ga.values.size


def test_moved_scene_moves_everything(suite):
    sc = suite.scene("shelf_placing", 0)
    T = translation(0.5, -0.25, 0.1)
    m = sc.moved(T)
    assert np.allclose(m.x0.translation, sc.x0.translation + [0.5, -0.25, 0.1])
    assert np.allclose(m.workspace_bounds.lo, sc.workspace_bounds.lo + [0.5, -0.25, 0.1])
    for p, q in zip(placing.enumerate_poses(sc.placing_set), placing.enumerate_poses(m.placing_set)):
        assert np.allclose(q.translation, p.translation + [0.5, -0.25, 0.1])


def test_unknown_task():
    with pytest.raises(ValueError):
        scenes.generate_scene(scenes.TaskScenario("juggling"))
