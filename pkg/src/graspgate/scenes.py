"""Synthetic pick-and-place scenes: rack hanging, shelf placing, slot insertion.

A scene bundles the environment, the target object (a composition of
primitives in its own frame), its initial pose, the placing set, the gripper
and the workspace. Every generator is a pure function of its parameters and
seed; the file format is canonical JSON so saves are byte-stable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import placing
from .errors import InfeasibleScenario, ParseError
from .gripper import GripperSpec, box_lattice
from .placing import PlacingSet, enumerate_poses
from .sdf import Bounds, EnvironmentModel, PrimitiveShape, SdfGrid, bake, union_sdf
from .se3 import Pose, compose, pose_from_dict, pose_to_dict, rot_y, rot_z, translation

TASKS = ("rack_hanging", "shelf_placing", "slot_insertion")

# mug: body cylinder about local z plus a three-box handle on +x
MUG_RADIUS = 0.035
MUG_HALF_HEIGHT = 0.045
# connector: box body with a wider lip on top
CONNECTOR_BODY = (0.02, 0.01, 0.03)
CONNECTOR_LIP = (0.026, 0.015, 0.004)

SCENE_D_SAFE = 0.01
TABLE_TOP = 0.0
PICK_CENTER = (-0.10, 0.0)


def mug_shape() -> tuple[PrimitiveShape, ...]:
    r, h = MUG_RADIUS, MUG_HALF_HEIGHT
    arm = (0.0175, 0.006, 0.005)
    return (
        PrimitiveShape("cylinder", (r, h), Pose.identity(), "body"),
        PrimitiveShape("box", arm, translation(r + 0.0125, 0, 0.028), "handle"),
        PrimitiveShape("box", arm, translation(r + 0.0125, 0, -0.028), "handle"),
        PrimitiveShape("box", (0.005, 0.006, 0.033), translation(r + 0.025, 0, 0), "handle"),
    )


def connector_shape() -> tuple[PrimitiveShape, ...]:
    bz = CONNECTOR_BODY[2]
    return (
        PrimitiveShape("box", CONNECTOR_BODY, Pose.identity(), "body"),
        PrimitiveShape("box", CONNECTOR_LIP, translation(0, 0, bz + CONNECTOR_LIP[2]), "lip"),
    )


def shape_aabb(shapes: Sequence[PrimitiveShape], pose: Pose | None = None) -> Bounds:
    boxes = [(s if pose is None else s.moved(pose)).aabb() for s in shapes]
    return Bounds(np.min([b.lo for b in boxes], axis=0), np.max([b.hi for b in boxes], axis=0))


def object_points(shapes: Sequence[PrimitiveShape], spacing: float = 0.004) -> np.ndarray:
    """Lattice points filling the object's primitives (object frame)."""
    pts = []
    for s in shapes:
        if s.kind == "box":
            h = np.asarray(s.dims)
        elif s.kind == "cylinder":
            h = np.array([s.dims[0], s.dims[0], s.dims[1]])
        else:
            h = np.full(3, s.dims[0])
        local = box_lattice(-h, h, spacing)
        if s.kind == "cylinder":
            local = local[np.hypot(local[:, 0], local[:, 1]) <= s.dims[0] + 1e-12]
        elif s.kind == "sphere":
            local = local[np.linalg.norm(local, axis=1) <= s.dims[0] + 1e-12]
        pts.append(s.pose.apply(local))
    return np.concatenate(pts)


@dataclass(frozen=True, eq=False)
class Scene:
    name: str
    environment: EnvironmentModel
    object_shape: tuple[PrimitiveShape, ...]
    object_initial_pose: Pose
    placing_set: PlacingSet
    gripper: GripperSpec
    workspace_bounds: Bounds
    d_safe: float
    task: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "object_shape", tuple(self.object_shape))
        if not self.object_shape:
            raise ValueError("scene object needs at least one primitive")
        if not (self.d_safe > 0):
            raise ValueError("d_safe must be positive")

    @property
    def x0(self) -> Pose:
        return self.object_initial_pose

    def with_placing_set(self, s: PlacingSet) -> "Scene":
        return _replace(self, placing_set=s)

    def moved(self, T: Pose) -> "Scene":
        """The whole scene after the rigid motion ``T`` (object shape is in its own frame)."""
        return _replace(
            self,
            environment=self.environment.moved(T),
            object_initial_pose=compose(T, self.object_initial_pose),
            placing_set=self.placing_set.moved(T),
            workspace_bounds=self.workspace_bounds.transformed(T),
        )


def _replace(scene: Scene, **kw) -> Scene:
    from dataclasses import replace

    return replace(scene, **kw)


def object_env_clearance(scene_env: EnvironmentModel, shapes: Sequence[PrimitiveShape], pose: Pose,
                         spacing: float = 0.003) -> float:
    if not scene_env.primitives:
        return math.inf
    pts = pose.apply(object_points(shapes, spacing))
    return float(union_sdf(scene_env.primitives, pts).min())


def check_scene(scene: Scene) -> None:
    """Raise :class:`InfeasibleScenario` if the object starts in collision or the base placement penetrates."""
    c0 = object_env_clearance(scene.environment, scene.object_shape, scene.x0)
    if not c0 > 0:
        raise InfeasibleScenario(f"{scene.name}: object at x0 intersects the environment ({c0:.4f} m)")
    base = _base_pose(scene.placing_set)
    cf = object_env_clearance(scene.environment, scene.object_shape, base)
    if cf < -1e-4:
        raise InfeasibleScenario(f"{scene.name}: base placement penetrates the environment ({cf:.4f} m)")


def _base_pose(s: PlacingSet) -> Pose:
    if s.kind == "discrete":
        return s.members[0]
    if s.kind == "product":
        return _base_pose(s.factors[0])
    return s.base_pose


# grid for a scene


def scene_margin(scene: Scene) -> float:
    return scene.gripper.diagonal() + scene.d_safe


def scene_grid(scene: Scene, resolution: float | None = None, workers: int = 1) -> SdfGrid:
    """Bake the environment over the workspace padded by one voxel, so the whole
    workspace lies inside the grid's query domain."""
    res = scene.d_safe / 2 if resolution is None else resolution
    bounds = scene.workspace_bounds.inflate(res)
    return bake(scene.environment, bounds, res, margin=scene_margin(scene), d_safe=scene.d_safe, workers=workers)


def compute_workspace(env: EnvironmentModel, shapes: Sequence[PrimitiveShape], poses: Sequence[Pose],
                      gripper: GripperSpec, d_safe: float, slack: float = 0.02) -> Bounds:
    """Bounds that keep every primitive a gripper diagonal plus d_safe from the
    walls and contain every gripper point around the object at any listed pose."""
    lo_hi = []
    margin = gripper.diagonal() + d_safe
    for p in env.primitives:
        lo_hi.append(p.aabb().inflate(margin + 1e-6))
    glo, ghi = gripper.extent()
    reach = float(np.linalg.norm(np.maximum(np.abs(glo), np.abs(ghi)))) + d_safe + slack
    for pose in poses:
        lo_hi.append(shape_aabb(shapes, pose).inflate(reach))
    lo = np.min([b.lo for b in lo_hi], axis=0)
    hi = np.max([b.hi for b in lo_hi], axis=0)
    # snap outward to a millimetre lattice so the bounds serialize compactly
    return Bounds(np.floor(lo * 1000) / 1000, np.ceil(hi * 1000) / 1000)


# scenario generation


@dataclass(frozen=True)
class TaskScenario:
    task: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    name: str | None = None


def _table() -> PrimitiveShape:
    x, y = PICK_CENTER
    return PrimitiveShape("box", (0.13, 0.13, 0.01), translation(x, y, TABLE_TOP - 0.01))


def _initial_pose(rng: np.random.Generator, z: float, params: Mapping[str, Any]) -> Pose:
    jitter = float(params.get("pick_jitter", 0.02))
    yaw = params.get("pick_yaw")
    yaw = float(rng.uniform(-math.pi, math.pi)) if yaw is None else float(yaw)
    dx, dy = rng.uniform(-jitter, jitter, size=2)
    x, y = PICK_CENTER
    return compose(translation(x + dx, y + dy, z), rot_z(yaw))


def _clear_run(values: np.ndarray, ok: np.ndarray) -> tuple[float, float]:
    """Largest contiguous run of ``ok`` lattice values containing parameter 0."""
    i0 = int(np.argmin(np.abs(values)))
    if not ok[i0]:
        raise InfeasibleScenario("base placement is not clear")
    lo = hi = i0
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < len(values) - 1 and ok[hi + 1]:
        hi += 1
    return float(values[lo]), float(values[hi])


def _clip_to_clear(s: PlacingSet, env: EnvironmentModel, shapes, tol: float = -1e-4,
                   inner: PlacingSet | None = None) -> PlacingSet:
    """Shrink a continuous set's range so every lattice pose keeps the object clear.

    With ``inner`` the check covers each value combined with every pose of the
    inner factor, so the whole product lattice stays clear.
    """
    vals = s.parameters()
    inner_offs = [Pose.identity()] if inner is None else [inner.offset(v) for v in inner.parameters()]

    def clear(v):
        o = s.offset(v)
        return all(object_env_clearance(env, shapes, compose(o, compose(i, s.base_pose))) >= tol for i in inner_offs)

    ok = np.array([clear(v) for v in vals])
    lo, hi = _clear_run(vals, ok)
    step = (s.hi - s.lo) / (s.samples - 1) if s.samples > 1 else 0.0
    n = int(round((hi - lo) / step)) + 1 if step else 1
    from dataclasses import replace

    return replace(s, lo=lo, hi=hi, samples=n)


def _mug_hang_pose(x: float, y_stick: float, z_stick: float) -> Pose:
    # handle loop opens along object y; object y along world x (the stick), handle toward -y
    return compose(translation(x, y_stick + 0.045, z_stick - 0.013), rot_z(-math.pi / 2))


def _rack_scene(sc: TaskScenario, rng: np.random.Generator) -> Scene:
    p = sc.params
    board_x = 0.26
    stick_half = 0.07
    stick_x = board_x - 0.01 - stick_half
    sticks = [(float(y), float(z)) for y, z in p.get("sticks", [(-0.12, 0.14), (0.0, 0.14), (0.12, 0.14),
                                                                 (-0.12, 0.25), (0.0, 0.25), (0.12, 0.25)])]
    target = int(p.get("target", 1))
    occupied = [(int(i), float(dx)) for i, dx in p.get("occupied", [])]
    prims = [
        _table(),
        PrimitiveShape("box", (0.06, 0.2, 0.01), translation(board_x - 0.03, 0, 0.01)),
        PrimitiveShape("box", (0.01, 0.2, 0.17), translation(board_x, 0, 0.19)),
    ]
    for y, z in sticks:
        prims.append(PrimitiveShape("cylinder", (0.005, stick_half), compose(translation(stick_x, y, z), rot_y(math.pi / 2))))
    mug = mug_shape()
    hang_x = stick_x - 0.02
    for i, dx in occupied:
        if i == target:
            raise InfeasibleScenario("target stick cannot be occupied")
        y, z = sticks[i]
        pose = _mug_hang_pose(hang_x + dx, y, z)
        prims.extend(s.moved(pose) for s in mug)
    env = EnvironmentModel(tuple(prims))
    ty, tz = sticks[target]
    base = _mug_hang_pose(hang_x, ty, tz)
    lin = placing.linear(base, (1, 0, 0), -0.04, 0.04)
    rot = placing.rotational(base, (1, 0, 0), (hang_x, ty, tz), -math.radians(60), math.radians(60))
    rot = _clip_to_clear(rot, env, mug)
    lin = _clip_to_clear(lin, env, mug, inner=rot)
    x0 = _initial_pose(rng, TABLE_TOP + MUG_HALF_HEIGHT + 0.002, p)
    return _finish(sc, env, mug, x0, placing.product(lin, rot))


def _shelf_scene(sc: TaskScenario, rng: np.random.Generator) -> Scene:
    p = sc.params
    height = float(p.get("height", 0.12))
    width = float(p.get("width", 0.30))
    depth = float(p.get("depth", 0.14))
    floor_z = float(p.get("floor_z", 0.06))
    front = 0.12
    wall = 0.01
    cx = front + depth / 2
    prims = [
        _table(),
        PrimitiveShape("box", (depth / 2, width / 2 + wall, wall / 2), translation(cx, 0, floor_z - wall / 2)),
        PrimitiveShape("box", (depth / 2, width / 2 + wall, wall / 2), translation(cx, 0, floor_z + height + wall / 2)),
        PrimitiveShape("box", (wall / 2, width / 2 + wall, height / 2 + wall), translation(front + depth + wall / 2, 0, floor_z + height / 2)),
        PrimitiveShape("box", (depth / 2, wall / 2, height / 2), translation(cx, width / 2 + wall / 2, floor_z + height / 2)),
        PrimitiveShape("box", (depth / 2, wall / 2, height / 2), translation(cx, -width / 2 - wall / 2, floor_z + height / 2)),
    ]
    for item in p.get("clutter", []):
        y, hx, hy, hz = (float(v) for v in item[:4])
        x = float(item[4]) if len(item) > 4 else cx
        prims.append(PrimitiveShape("box", (hx, hy, hz), translation(x, y, floor_z + hz)))
    env = EnvironmentModel(tuple(prims))
    mug = mug_shape()
    # lying mug: axis along world x with the rim toward the opening, handle up
    mug_x = front + MUG_HALF_HEIGHT + float(p.get("inset", 0.012))
    axis_z = floor_z + MUG_RADIUS + 0.001
    y0 = float(p.get("place_y", 0.0))
    base = compose(translation(mug_x, y0, axis_z), rot_y(-math.pi / 2))
    half_span = float(p.get("linear_half_range", 0.08))
    roll = math.radians(float(p.get("roll_range_deg", 60)))
    lin = placing.linear(base, (0, 1, 0), -half_span, half_span)
    rot = placing.rotational(base, (1, 0, 0), (mug_x, y0, axis_z), -roll, roll)
    rot = _clip_to_clear(rot, env, mug)
    lin = _clip_to_clear(lin, env, mug, inner=rot)
    x0 = _initial_pose(rng, TABLE_TOP + MUG_HALF_HEIGHT + 0.002, p)
    return _finish(sc, env, mug, x0, placing.product(lin, rot))


def _slot_scene(sc: TaskScenario, rng: np.random.Generator) -> Scene:
    p = sc.params
    board_top = 0.01
    sx, sy = (float(v) for v in p.get("socket_xy", (0.20, 0.0)))
    syaw = float(p.get("socket_yaw", 0.0))
    socket_h = 0.012
    inner = (CONNECTOR_BODY[0] + 0.001, CONNECTOR_BODY[1] + 0.001)
    t = 0.003
    frame = compose(translation(sx, sy, 0), rot_z(syaw))
    zc = board_top + socket_h / 2
    socket = [
        PrimitiveShape("box", (inner[0] + 2 * t, t, socket_h / 2), translation(0, inner[1] + t, zc)),
        PrimitiveShape("box", (inner[0] + 2 * t, t, socket_h / 2), translation(0, -inner[1] - t, zc)),
        PrimitiveShape("box", (t, inner[1], socket_h / 2), translation(inner[0] + t, 0, zc)),
        PrimitiveShape("box", (t, inner[1], socket_h / 2), translation(-inner[0] - t, 0, zc)),
    ]
    prims = [
        _table(),
        PrimitiveShape("box", (0.13, 0.15, board_top / 2), translation(0.20, 0, board_top / 2)),
    ]
    prims.extend(s.moved(frame) for s in socket)
    wall_y = p.get("case_wall_y")
    if wall_y is not None:
        prims.append(PrimitiveShape("box", (0.13, 0.005, 0.1), translation(0.20, float(wall_y), board_top + 0.1)))
    for comp in p.get("components", []):
        x, y, hx, hy, hz = (float(v) for v in comp[:5])
        prims.append(PrimitiveShape("box", (hx, hy, hz), translation(x, y, board_top + hz)))
    env = EnvironmentModel(tuple(prims))
    conn = connector_shape()
    depth = 0.008
    zf = board_top + socket_h - depth + CONNECTOR_BODY[2]
    xf = compose(frame, translation(0, 0, zf))
    x0 = _initial_pose(rng, TABLE_TOP + CONNECTOR_BODY[2] + 0.002, p)
    return _finish(sc, env, conn, x0, placing.discrete([xf]))


def _finish(sc: TaskScenario, env, shapes, x0: Pose, s: PlacingSet) -> Scene:
    d_safe = float(sc.params.get("d_safe", SCENE_D_SAFE))
    gripper = GripperSpec(sample_spacing=float(sc.params.get("sample_spacing", d_safe)))
    dense = enumerate_poses(s.densified(4))
    ws = compute_workspace(env, shapes, [x0, *dense], gripper, d_safe)
    name = sc.name or f"{sc.task}-s{sc.seed}"
    scene = Scene(name, env, shapes, x0, s, gripper, ws, d_safe, sc.task)
    check_scene(scene)
    return scene


_GENERATORS = {"rack_hanging": _rack_scene, "shelf_placing": _shelf_scene, "slot_insertion": _slot_scene}


def generate_scene(scenario: TaskScenario) -> Scene:
    if scenario.task not in _GENERATORS:
        raise ValueError(f"unknown task {scenario.task!r}; expected one of {', '.join(TASKS)}")
    rng = np.random.default_rng(scenario.seed)
    return _GENERATORS[scenario.task](scenario, rng)


# presets: five scenarios per task

PRESETS: dict[str, list[dict[str, Any]]] = {
    "rack_hanging": [
        {"target": 1, "occupied": []},
        {"target": 1, "occupied": [(4, 0.0)]},
        {"target": 1, "occupied": [(0, 0.0), (2, 0.02)]},
        {"target": 4, "occupied": [(1, 0.0), (3, -0.02)]},
        {"target": 0, "occupied": [(1, 0.02), (3, 0.0)]},
    ],
    "shelf_placing": [
        {"height": 0.12, "width": 0.30},
        {"height": 0.12, "width": 0.30, "clutter": [(0.10, 0.03, 0.03, 0.04)]},
        {"height": 0.12, "width": 0.30, "clutter": [(-0.09, 0.03, 0.025, 0.05), (0.11, 0.03, 0.02, 0.03)]},
        {"height": 0.11, "width": 0.22, "clutter": [(0.08, 0.02, 0.02, 0.03)]},
        {"height": 0.11, "width": 0.15, "roll_range_deg": 45},
    ],
    "slot_insertion": [
        {},
        {"case_wall_y": 0.06},
        {"components": [(0.20, 0.06, 0.03, 0.004, 0.03)]},
        {"socket_yaw": math.pi / 2, "components": [(0.25, 0.0, 0.004, 0.04, 0.035)]},
        {"case_wall_y": -0.08, "components": [(0.15, 0.0, 0.004, 0.03, 0.04)]},
    ],
}

NARROW_SHELF_INDEX = 4


def preset_scenario(task: str, index: int, seed: int | None = None) -> TaskScenario:
    params = PRESETS[task][index]
    s = index + 1 if seed is None else seed
    return TaskScenario(task, params, s, name=f"{task}-{index + 1}")


def preset_scenes(task: str) -> list[Scene]:
    return [generate_scene(preset_scenario(task, i)) for i in range(len(PRESETS[task]))]


# file format


def _shape_to_dict(s: PrimitiveShape) -> dict[str, Any]:
    d = {"kind": s.kind, "dims": list(s.dims), "pose": pose_to_dict(s.pose)}
    if s.region is not None:
        d["region"] = s.region
    return d


def _shape_from_dict(d: Any, where: str) -> PrimitiveShape:
    if not isinstance(d, Mapping):
        raise ParseError(f"{where}: expected an object")
    for key in ("kind", "dims"):
        if key not in d:
            raise ParseError(f"{where}: missing field '{key}'")
    pose = pose_from_dict(d["pose"], f"{where}.pose") if "pose" in d else Pose.identity()
    try:
        return PrimitiveShape(d["kind"], tuple(d["dims"]), pose, d.get("region"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


def scene_to_dict(scene: Scene) -> dict[str, Any]:
    return {
        "name": scene.name,
        "task": scene.task,
        "environment": [_shape_to_dict(s) for s in scene.environment.primitives],
        "object": {
            "shape": [_shape_to_dict(s) for s in scene.object_shape],
            "initial_pose": pose_to_dict(scene.object_initial_pose),
        },
        "placing_set": placing.to_dict(scene.placing_set),
        "gripper": scene.gripper.to_dict(),
        "workspace_bounds": {
            "min": [float(v) for v in scene.workspace_bounds.lo],
            "max": [float(v) for v in scene.workspace_bounds.hi],
        },
        "d_safe": scene.d_safe,
    }


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(dumps_scene(scene), encoding="utf-8")


def _require(d: Mapping[str, Any], key: str, where: str = "scene") -> Any:
    if key not in d:
        raise ParseError(f"{where}: missing field '{key}'")
    return d[key]


def scene_from_dict(d: Mapping[str, Any]) -> Scene:
    if not isinstance(d, Mapping):
        raise ParseError("scene: expected a JSON object")
    name = str(_require(d, "name"))
    env_list = _require(d, "environment")
    if not isinstance(env_list, list):
        raise ParseError("scene.environment: expected an array")
    prims = tuple(_shape_from_dict(e, f"environment[{i}]") for i, e in enumerate(env_list))
    env = EnvironmentModel(prims, free_space=not prims)
    obj = _require(d, "object")
    shapes_raw = _require(obj, "shape", "object")
    if not isinstance(shapes_raw, list) or not shapes_raw:
        raise ParseError("object.shape: expected a non-empty array")
    shapes = tuple(_shape_from_dict(s, f"object.shape[{i}]") for i, s in enumerate(shapes_raw))
    x0 = pose_from_dict(_require(obj, "initial_pose", "object"), "object.initial_pose")
    s = placing.from_dict(_require(d, "placing_set"))
    g = _require(d, "gripper")
    if not isinstance(g, Mapping):
        raise ParseError("gripper: expected an object")
    try:
        gripper = GripperSpec(**{k: float(v) for k, v in g.items()})
    except (TypeError, ValueError) as exc:
        raise ParseError(f"gripper: {exc}") from None
    wb = _require(d, "workspace_bounds")
    try:
        bounds = Bounds.of(_require(wb, "min", "workspace_bounds"), _require(wb, "max", "workspace_bounds"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"workspace_bounds: {exc}") from None
    d_safe = _require(d, "d_safe")
    if not isinstance(d_safe, (int, float)) or not d_safe > 0:
        raise ParseError("d_safe: must be a positive number")
    return Scene(name, env, shapes, x0, s, gripper, bounds, float(d_safe), d.get("task"))


def loads_scene(text: str, source: str = "<scene>") -> Scene:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return scene_from_dict(data)
    except ParseError as exc:
        raise ParseError(f"{source}: {exc}") from None


def load_scene(path: str | Path) -> Scene:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return loads_scene(text, str(path))
