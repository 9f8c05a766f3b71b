"""Grasp filtering: keep candidates that are collision-free at pick and at one
or more placements, then select the feasible candidate of highest quality.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import NoCandidates, ParseError
from .gripper import GripperBody
from .placing import PlacingSet, enumerate_poses
from .sdf import SdfGrid, clearance
from .se3 import Pose, compose, inverse, placing_grasp, pose_from_dict, pose_to_dict, stack

DEFAULT_D_SAFE = 0.005


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    id: str
    pose: Pose
    quality: float
    region: str | None = None

    def __post_init__(self):
        q = float(self.quality)
        if not (0.0 <= q <= 1.0):
            raise ValueError(f"candidate {self.id}: quality {q} outside [0, 1]")
        object.__setattr__(self, "quality", q)
        object.__setattr__(self, "id", str(self.id))


@dataclass(frozen=True)
class FilterConfig:
    d_safe: float = DEFAULT_D_SAFE
    placing_samples: Mapping[str, int] = field(default_factory=dict)
    check_pick: bool = True
    threads: int | None = None

    def __post_init__(self):
        if not (self.d_safe > 0 and math.isfinite(self.d_safe)):
            raise ValueError("d_safe must be positive")


@dataclass(frozen=True, eq=False)
class Placement:
    object_pose: Pose
    gripper_pose: Pose
    place_clearance: float


@dataclass(frozen=True, eq=False)
class FilterVerdict:
    candidate_id: str
    feasible: bool
    pick_clearance: float
    best_placement: Placement | None
    n_feasible_placements: int
    object_clearance: float | None = None


@dataclass(frozen=True, eq=False)
class FilterResult:
    verdicts: list[FilterVerdict]
    selected: str | None
    # per-(candidate, placement) grid clearance; -inf where the pick check failed
    place_clearances: np.ndarray | None = field(default=None, repr=False)

    def feasible_ids(self) -> list[str]:
        return [v.candidate_id for v in self.verdicts if v.feasible]

    def verdict(self, cid: str) -> FilterVerdict:
        for v in self.verdicts:
            if v.candidate_id == cid:
                return v
        raise KeyError(cid)


def _transfers(placements: Sequence[Pose], x0: Pose) -> tuple[np.ndarray, np.ndarray]:
    inv_x0 = inverse(x0)
    return stack([compose(xf, inv_x0) for xf in placements])


def gripper_place_poses(g0: np.ndarray, t0: np.ndarray, TR: np.ndarray, Tt: np.ndarray):
    """Batched non-slip mapping: ``(T_k @ g0_n)`` for every candidate n and transfer k.

    Returns rotations (N, K, 3, 3) and translations (N, K, 3).
    """
    R = np.einsum("kij,njl->nkil", TR, g0)
    t = np.einsum("kij,nj->nki", TR, t0) + Tt[None, :, :]
    return R, t


def filter_grasps(
    candidates: Sequence[GraspCandidate],
    x0: Pose,
    placing_set: PlacingSet,
    grid: SdfGrid,
    gripper: GripperBody,
    cfg: FilterConfig = FilterConfig(),
    object_points: np.ndarray | None = None,
) -> FilterResult:
    """Evaluate every candidate against pick and place clearance and pick the best.

    ``object_points`` (object frame) enables a diagnostic clearance of the
    object itself at each chosen placement; it never affects verdicts.
    """
    if not candidates:
        raise NoCandidates("no grasp candidates supplied")
    _kernels.set_threads(cfg.threads)
    placements = enumerate_poses(placing_set.resampled(cfg.placing_samples))
    d_safe = cfg.d_safe
    body = gripper.points

    gR, gt = stack([c.pose for c in candidates])
    pick = _kernels.batch_clearance(grid, body, gR, gt)
    passes = pick >= d_safe if cfg.check_pick else np.ones(len(candidates), dtype=bool)

    K = len(placements)
    place = np.full((len(candidates), K), -np.inf)
    idx = np.flatnonzero(passes)
    if idx.size and K:
        TR, Tt = _transfers(placements, x0)
        R, t = gripper_place_poses(gR[idx], gt[idx], TR, Tt)
        vals = _kernels.batch_clearance(grid, body, R.reshape(-1, 3, 3), t.reshape(-1, 3))
        place[idx] = vals.reshape(idx.size, K)

    verdicts = []
    for n, cand in enumerate(candidates):
        ok = place[n] >= d_safe
        count = int(ok.sum())
        best = None
        obj_clear = None
        if passes[n] and count:
            k = int(np.argmax(np.where(ok, place[n], -np.inf)))
            xf = placements[k]
            best = Placement(xf, placing_grasp(cand.pose, x0, xf), float(place[n, k]))
            if object_points is not None:
                obj_clear = clearance(grid, xf.apply(object_points))
        verdicts.append(
            FilterVerdict(cand.id, bool(passes[n] and count > 0), float(pick[n]), best, count, obj_clear)
        )
    return FilterResult(verdicts, select(candidates, verdicts), place)


def select(candidates: Sequence[GraspCandidate], verdicts: Sequence[FilterVerdict]) -> str | None:
    """Highest-quality feasible candidate; earliest wins ties."""
    best_id, best_q = None, -math.inf
    for c, v in zip(candidates, verdicts):
        if v.feasible and c.quality > best_q:
            best_id, best_q = c.id, c.quality
    return best_id


def evaluate_candidate(
    candidate: GraspCandidate,
    x0: Pose,
    placing_set: PlacingSet,
    grid: SdfGrid,
    gripper: GripperBody,
    cfg: FilterConfig = FilterConfig(),
) -> FilterVerdict:
    return filter_grasps([candidate], x0, placing_set, grid, gripper, cfg).verdicts[0]


def ranked_feasible(candidates: Sequence[GraspCandidate], result: FilterResult) -> list[str]:
    """Feasible candidate ids by descending quality (stable on input order)."""
    feas = {v.candidate_id for v in result.verdicts if v.feasible}
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].quality)
    return [candidates[i].id for i in order if candidates[i].id in feas]


# file formats


def _num(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def candidate_to_dict(c: GraspCandidate) -> dict[str, Any]:
    d = {"id": c.id, **pose_to_dict(c.pose), "quality": c.quality}
    if c.region is not None:
        d["region"] = c.region
    return d


def candidate_from_dict(d: Mapping[str, Any], where: str) -> GraspCandidate:
    if not isinstance(d, Mapping):
        raise ParseError(f"{where}: expected an object")
    for key in ("id", "position", "quaternion", "quality"):
        if key not in d:
            raise ParseError(f"{where}: missing field '{key}'")
    pose = pose_from_dict(d, where)
    try:
        return GraspCandidate(str(d["id"]), pose, float(d["quality"]), d.get("region"))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


def save_candidates(cands: Sequence[GraspCandidate], path: str | Path) -> None:
    text = json.dumps([candidate_to_dict(c) for c in cands], indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_candidates(path: str | Path) -> list[GraspCandidate]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of candidates")
    cands = [candidate_from_dict(d, f"{path}[{i}]") for i, d in enumerate(data)]
    ids = [c.id for c in cands]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate candidate ids")
    return cands


def verdict_to_dict(v: FilterVerdict) -> dict[str, Any]:
    best = None
    if v.best_placement is not None:
        b = v.best_placement
        best = {
            "object_pose": pose_to_dict(b.object_pose),
            "gripper_pose": pose_to_dict(b.gripper_pose),
            "place_clearance": _num(b.place_clearance),
        }
    d = {
        "candidate_id": v.candidate_id,
        "feasible": v.feasible,
        "pick_clearance": _num(v.pick_clearance),
        "best_placement": best,
        "n_feasible_placements": v.n_feasible_placements,
    }
    if v.object_clearance is not None:
        d["object_clearance"] = _num(v.object_clearance)
    return d


def report_dict(result: FilterResult) -> dict[str, Any]:
    return {"selected": result.selected, "verdicts": [verdict_to_dict(v) for v in result.verdicts]}


def write_report(result: FilterResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_dict(result), indent=2) + "\n", encoding="utf-8")
