import json
import math

import numpy as np
import pytest

from graspgate import _kernels, placing
from graspgate.errors import NoCandidates, ParseError
from graspgate.grasp_filter import (
    FilterConfig,
    GraspCandidate,
    evaluate_candidate,
    filter_grasps,
    load_candidates,
    ranked_feasible,
    report_dict,
    save_candidates,
)
from graspgate.gripper import GripperSpec, build_body
from graspgate.sdf import Bounds, EnvironmentModel, PrimitiveShape, bake, clearance
from graspgate.se3 import Pose, compose, inverse, pose_distance, random_pose, rot_x, translation

BODY = build_body(GripperSpec(sample_spacing=0.01))
SLAB = PrimitiveShape("box", (0.4, 0.4, 0.02), translation(0, 0, -0.02))  # top face at z = 0
BOUNDS = Bounds.of((-0.7, -0.7, -0.4), (0.7, 0.7, 0.7))


@pytest.fixture(scope="module")
def slab_grid():
    return bake(EnvironmentModel((SLAB,)), BOUNDS, 0.005)


@pytest.fixture(scope="module")
def free_grid():
    return bake(EnvironmentModel((), free_space=True), BOUNDS, 0.05)


def _cand(cid, z, q=0.5, x=0.0):
    return GraspCandidate(cid, translation(x, 0, z), q)


def test_free_space_selects_max_quality(free_grid):
    cands = [_cand("a", 0.1, 0.5), _cand("b", 0.1, 0.9), _cand("c", 0.1, 0.7)]
    s = placing.linear(Pose.identity(), (1, 0, 0), 0, 0.1, 3)
    res = filter_grasps(cands, Pose.identity(), s, free_grid, BODY)
    assert res.feasible_ids() == ["a", "b", "c"]
    assert res.selected == "b"
    assert ranked_feasible(cands, res) == ["b", "c", "a"]


def test_quality_ties_go_to_first(free_grid):
    cands = [_cand("a", 0.1, 0.8), _cand("b", 0.1, 0.8)]
    res = filter_grasps(cands, Pose.identity(), placing.discrete([Pose.identity()]), free_grid, BODY)
    assert res.selected == "a"


def test_identity_placement_reduces_to_pick_check(slab_grid):
    x0 = translation(0.05, 0.0, 0.03)
    cands = [_cand("low", 0.01), _cand("high", 0.2)]
    res = filter_grasps(cands, x0, placing.discrete([x0]), slab_grid, BODY, FilterConfig(d_safe=0.01))
    low, high = res.verdicts
    assert not low.feasible and high.feasible
    assert pose_distance(high.best_placement.gripper_pose, cands[1].pose) < 1e-12
    assert high.best_placement.place_clearance == pytest.approx(high.pick_clearance)


def test_threshold_is_inclusive(slab_grid):
    c = _cand("g", 0.0731)
    pick = evaluate_candidate(c, Pose.identity(), placing.discrete([Pose.identity()]), slab_grid, BODY,
                              FilterConfig(d_safe=0.001)).pick_clearance
    at = evaluate_candidate(c, Pose.identity(), placing.discrete([Pose.identity()]), slab_grid, BODY, FilterConfig(d_safe=pick))
    above = evaluate_candidate(c, Pose.identity(), placing.discrete([Pose.identity()]), slab_grid, BODY,
                               FilterConfig(d_safe=math.nextafter(pick, math.inf)))
    assert at.feasible and not above.feasible


def test_feasible_placement_count_matches_oracle(slab_grid):
    # lower the object (and hence the gripper) toward the slab in 20 steps
    x0 = Pose.identity()
    s = placing.linear(translation(0, 0, 0.0), (0, 0, 1), -0.19, 0.0, 20)
    c = _cand("g", 0.2)
    d_safe = 0.155
    v = evaluate_candidate(c, x0, s, slab_grid, BODY, FilterConfig(d_safe=d_safe))
    lowest = 0.2 - 0.0225  # jaw tips
    expect = sum(lowest + dz >= d_safe for dz in np.linspace(-0.19, 0.0, 20))
    assert v.n_feasible_placements == expect == 3
    assert v.best_placement.object_pose.translation[2] == pytest.approx(0.0)


def test_pick_failure_skips_place(slab_grid):
    c = _cand("g", 0.0)
    res = filter_grasps([c], Pose.identity(), placing.discrete([translation(0, 0, 0.3)]), slab_grid, BODY)
    v = res.verdicts[0]
    assert not v.feasible and v.best_placement is None and v.n_feasible_placements == 0
    assert np.all(np.isneginf(res.place_clearances))
    # without the pick check the same grasp is judged at placement only
    res2 = filter_grasps([c], Pose.identity(), placing.discrete([translation(0, 0, 0.3)]), slab_grid, BODY,
                         FilterConfig(check_pick=False))
    assert res2.verdicts[0].n_feasible_placements == 1


def test_out_of_grid_placement_is_infeasible(slab_grid):
    c = _cand("g", 0.2)
    v = evaluate_candidate(c, Pose.identity(), placing.discrete([translation(5, 0, 0)]), slab_grid, BODY)
    assert not v.feasible and v.n_feasible_placements == 0


def test_best_placement_obeys_non_slip(slab_grid, rng):
    x0 = compose(translation(0.05, 0.02, 0.1), rot_x(0.2))
    s = placing.product(placing.linear(x0, (1, 0, 0), -0.1, 0.1, 5), placing.rotational(x0, (0, 0, 1), (0.05, 0.02, 0.1), -1, 1, 5))
    c = GraspCandidate("g", compose(x0, translation(0, 0, 0.15)), 1.0)
    v = evaluate_candidate(c, x0, s, slab_grid, BODY)
    b = v.best_placement
    assert pose_distance(compose(inverse(b.object_pose), b.gripper_pose), compose(inverse(x0), c.pose)) < 1e-9


def test_kernel_matches_reference_interpolation(slab_grid, rng):
    poses = [compose(translation(*rng.uniform(-0.3, 0.3, 3)), random_pose(rng, 0.0)) for _ in range(200)]
    R = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    got = _kernels.batch_clearance(slab_grid, BODY.points, R, t)
    ref = [clearance(slab_grid, p.apply(BODY.points)) for p in poses]
    assert np.allclose(got, ref, rtol=0, atol=1e-12)


def test_results_independent_of_thread_count(slab_grid, rng):
    cands = [GraspCandidate(f"g{i}", compose(translation(*rng.uniform(-0.2, 0.2, 2), rng.uniform(0, 0.2)), random_pose(rng, 0)), 0.5)
             for i in range(30)]
    s = placing.linear(Pose.identity(), (0, 0, 1), -0.05, 0.05, 6)
    out = []
    for n in (1, 2, 4):
        res = filter_grasps(cands, Pose.identity(), s, slab_grid, BODY, FilterConfig(threads=n))
        out.append(json.dumps(report_dict(res)))
    assert out[0] == out[1] == out[2]


def test_no_candidates(slab_grid):
    with pytest.raises(NoCandidates):
        filter_grasps([], Pose.identity(), placing.discrete([Pose.identity()]), slab_grid, BODY)


def test_quality_range_checked():
    with pytest.raises(ValueError):
        GraspCandidate("g", Pose.identity(), 1.5)


def test_candidate_file_round_trip(tmp_path, rng):
    cands = [GraspCandidate(f"g{i}", random_pose(rng), float(rng.random())) for i in range(5)]
    p = tmp_path / "c.json"
    save_candidates(cands, p)
    again = load_candidates(p)
    save_candidates(again, tmp_path / "d.json")
    assert (tmp_path / "d.json").read_bytes() == p.read_bytes()


def test_candidate_file_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps([{"id": "a", "position": [0, 0, 0], "quaternion": [1, 0, 0, 0], "quality": 0.5}] * 2))
    with pytest.raises(ParseError, match="duplicate"):
        load_candidates(p)
    p.write_text(json.dumps([{"id": "a", "position": [0, 0, 0], "quality": 0.5}]))
    with pytest.raises(ParseError, match="quaternion"):
        load_candidates(p)
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_candidates(p)


def test_report_has_no_non_finite_numbers(slab_grid):
    res = filter_grasps([_cand("g", 0.2)], Pose.identity(), placing.discrete([translation(5, 0, 0)]), slab_grid, BODY)
    text = json.dumps(report_dict(res), allow_nan=False)
    assert '"selected": null' in text
