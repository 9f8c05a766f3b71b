"""Ground-truth labels from an analytic oracle, success/recall metrics, the two
baselines and the placing-set ablation runner.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientCandidates, NonAnalyticScene, PickFailureInExecuted, UnlabeledId, UnlabeledRegion
from .grasp_filter import FilterConfig, FilterResult, GraspCandidate, filter_grasps
from .gripper import build_body
from .placing import PlacingSet, discrete, enumerate_poses, variants as set_variants
from .sampler import contact_regions, pickable_in_isolation, sample_candidates
from .scenes import Scene, scene_grid
from .sdf import SdfGrid, union_sdf
from .se3 import compose, inverse, stack

DEFAULT_K = 10
# 4x flips a borderline shelf label against 16x; 8x agrees on every preset pool
ORACLE_DENSITY = 8
METHODS = ("ours", "vanilla", "sodg")
CSV_HEADER = ("task", "scenario", "method", "executed", "achieved", "achievable", "success_rate", "recall")

# SODG stand-in: static region rules per task
TOP_DOWN_TOLERANCE_DEG = 20.0
REGION_RULES: dict[str, dict[str, Any]] = {
    "rack_hanging": {"reject_regions": ["handle"]},
    "shelf_placing": {"reject_regions": ["body"]},
    "slot_insertion": {"top_down_only": TOP_DOWN_TOLERANCE_DEG},
}


@dataclass(frozen=True)
class GroundTruthLabel:
    candidate_id: str
    pick_success: bool
    task_achievable: bool

    def __post_init__(self):
        if self.task_achievable and not self.pick_success:
            raise ValueError("task_achievable requires pick_success")


@dataclass(frozen=True)
class MetricsReport:
    task: str | None
    method: str
    executed_count: int
    achieved_count: int
    achievable_count: int
    success_rate: float | None
    recall: float | None
    scenario: str | None = None


# oracle


def analytic_clearances(scene: Scene, points: np.ndarray, rots: np.ndarray, trans: np.ndarray,
                        chunk: int = 200_000) -> np.ndarray:
    """Exact min environment distance of ``points`` under each pose; ``-inf`` if
    any point leaves the workspace."""
    prims = scene.environment.primitives
    lo, hi = scene.workspace_bounds
    n = len(rots)
    out = np.empty(n)
    step = max(1, chunk // max(len(points), 1))
    for s in range(0, n, step):
        R, t = rots[s:s + step], trans[s:s + step]
        world = np.einsum("mij,pj->mpi", R, points) + t[:, None, :]
        d = union_sdf(prims, world).min(axis=1)
        outside = ((world < lo) | (world > hi)).any(axis=(1, 2))
        d[outside] = -np.inf
        out[s:s + step] = d
    return out


def _label_one(scene: Scene, cand: GraspCandidate, body: np.ndarray, placements_T, d_safe: float) -> GroundTruthLabel:
    g = cand.pose
    pick = analytic_clearances(scene, body, g.rotation[None], g.translation[None])[0]
    g_obj = compose(inverse(scene.x0), g)
    ok = pick >= d_safe and pickable_in_isolation(scene.object_shape, body, g_obj)
    if not ok:
        return GroundTruthLabel(cand.id, False, False)
    TR, Tt = placements_T
    R = np.einsum("kij,jl->kil", TR, g.rotation)
    t = TR @ g.translation + Tt
    # stop at the first feasible placement; chunks keep memory flat
    for s in range(0, len(R), 64):
        if (analytic_clearances(scene, body, R[s:s + 64], t[s:s + 64]) >= d_safe).any():
            return GroundTruthLabel(cand.id, True, True)
    return GroundTruthLabel(cand.id, True, False)


def label_ground_truth(
    scene: Scene,
    candidates: Sequence[GraspCandidate],
    density: int = ORACLE_DENSITY,
    placing_set: PlacingSet | None = None,
    workers: int = 1,
) -> dict[str, GroundTruthLabel]:
    """Oracle labels from exact primitive SDFs over the placing set densified by ``density``."""
    if not scene.environment.primitives and not scene.environment.free_space:
        raise NonAnalyticScene(f"{scene.name}: environment has no analytic primitives")
    s = scene.placing_set if placing_set is None else placing_set
    poses = enumerate_poses(s.densified(density))
    inv_x0 = inverse(scene.x0)
    T = stack([compose(xf, inv_x0) for xf in poses])
    body = build_body(scene.gripper).points

    def run(c):
        return _label_one(scene, c, body, T, scene.d_safe)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            labels = list(ex.map(run, candidates))
    else:
        labels = [run(c) for c in candidates]
    return {lab.candidate_id: lab for lab in labels}


# metrics


def _ratio(a: int, b: int) -> float | None:
    return a / b if b else None


def compute_metrics(
    executed: Iterable[str],
    labels: Mapping[str, GroundTruthLabel],
    task: str | None = None,
    method: str = "",
    scenario: str | None = None,
) -> MetricsReport:
    ex = list(dict.fromkeys(executed))
    for cid in ex:
        if cid not in labels:
            raise UnlabeledId(f"executed id {cid!r} has no label")
        if not labels[cid].pick_success:
            raise PickFailureInExecuted(f"executed id {cid!r} is a picking failure")
    achieved = sum(labels[c].task_achievable for c in ex)
    achievable = sum(lab.task_achievable for lab in labels.values())
    return MetricsReport(task, method, len(ex), achieved, achievable,
                         _ratio(achieved, len(ex)), _ratio(achieved, achievable), scenario)


def metrics_from_counts(executed: int, achieved: int, achievable: int, task=None, method="") -> MetricsReport:
    """Metrics from raw counts, for published tallies without per-grasp sets."""
    if not 0 <= achieved <= min(executed, achievable):
        raise ValueError("counts must satisfy 0 <= achieved <= min(executed, achievable)")
    return MetricsReport(task, method, executed, achieved, achievable,
                         _ratio(achieved, executed), _ratio(achieved, achievable))


# methods


def top_k(candidates: Sequence[GraspCandidate], allowed: Iterable[str], k: int) -> list[str]:
    """Ids of the ``k`` highest-quality allowed candidates, ties by input order."""
    ok = set(allowed)
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].quality)
    return [candidates[i].id for i in order if candidates[i].id in ok][:k]


def _pick_success(labels: Mapping[str, GroundTruthLabel]) -> set[str]:
    return {cid for cid, lab in labels.items() if lab.pick_success}


def run_baseline_vanilla(candidates: Sequence[GraspCandidate], labels: Mapping[str, GroundTruthLabel], k: int) -> list[str]:
    """Top-k by quality among pick-success candidates, blind to the task."""
    ps = _pick_success(labels)
    n = sum(c.id in ps for c in candidates)
    if k > n:
        raise InsufficientCandidates(f"k={k} exceeds the {n} pick-success candidates")
    return top_k(candidates, ps, k)


def sodg_accepts(scene: Scene, cand: GraspCandidate, rules: Mapping[str, Any]) -> bool:
    if "top_down_only" in rules:
        approach_up = float(cand.pose.rotation[2, 2])
        return approach_up >= math.cos(math.radians(float(rules["top_down_only"])))
    g_obj = compose(inverse(scene.x0), cand.pose)
    regions = contact_regions(scene.object_shape, g_obj, scene.gripper.jaw_opening)
    return not (set(regions) & set(rules.get("reject_regions", ())))


def run_baseline_sodg(
    scene: Scene,
    candidates: Sequence[GraspCandidate],
    labels: Mapping[str, GroundTruthLabel],
    k: int,
    region_rules: Mapping[str, Any] | None = None,
) -> list[str]:
    """Top-k by quality among pick-success candidates that pass the task's region rule."""
    rules = REGION_RULES.get(scene.task or "", {}) if region_rules is None else region_rules
    missing = [i for i, s in enumerate(scene.object_shape) if s.region is None]
    if missing:
        raise UnlabeledRegion(f"object primitives {missing} carry no region label")
    ps = _pick_success(labels)
    ok = [c.id for c in candidates if c.id in ps and sodg_accepts(scene, c, rules)]
    return top_k(candidates, ok, k)


def run_ours(
    candidates: Sequence[GraspCandidate],
    result: FilterResult,
    labels: Mapping[str, GroundTruthLabel],
    k: int,
    fill: bool = False,
) -> list[str]:
    """Top-k of the filter's feasible set; picking failures are never executed.

    With ``fill`` the budget of ``k`` is always spent: rejected pick-success
    candidates follow the accepted ones in quality order.
    """
    ps = _pick_success(labels)
    feas = set(result.feasible_ids()) & ps
    chosen = top_k(candidates, feas, k)
    if fill and len(chosen) < k:
        chosen += top_k(candidates, ps - feas, k - len(chosen))
    return chosen


def filter_scene(scene: Scene, candidates: Sequence[GraspCandidate], grid: SdfGrid | None = None,
                 placing_set: PlacingSet | None = None, threads: int | None = None) -> FilterResult:
    grid = scene_grid(scene) if grid is None else grid
    s = scene.placing_set if placing_set is None else placing_set
    cfg = FilterConfig(d_safe=scene.d_safe, threads=threads)
    return filter_grasps(candidates, scene.x0, s, grid, build_body(scene.gripper), cfg)


def evaluate_scene(
    scene: Scene,
    candidates: Sequence[GraspCandidate],
    methods: Sequence[str] = METHODS,
    k: int = DEFAULT_K,
    density: int = ORACLE_DENSITY,
    grid: SdfGrid | None = None,
    labels: Mapping[str, GroundTruthLabel] | None = None,
    threads: int | None = None,
) -> list[MetricsReport]:
    """One metrics row per method. Vanilla's k is capped at the pick-success count."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {', '.join(sorted(unknown))}")
    labels = label_ground_truth(scene, candidates, density) if labels is None else labels
    rows = []
    for m in methods:
        if m == "ours":
            ex = run_ours(candidates, filter_scene(scene, candidates, grid, threads=threads), labels, k)
        elif m == "vanilla":
            ex = run_baseline_vanilla(candidates, labels, min(k, len(_pick_success(labels))))
        else:
            ex = run_baseline_sodg(scene, candidates, labels, k)
        rows.append(compute_metrics(ex, labels, scene.task, m, scene.name))
    return rows


def run_ablation(
    scenes: Sequence[Scene],
    candidates: Mapping[str, Sequence[GraspCandidate]],
    variant_names: Sequence[str] = ("linear", "rotational", "product", "external"),
    external: Mapping[str, PlacingSet] | None = None,
    k: int = DEFAULT_K,
    density: int = ORACLE_DENSITY,
    grids: Mapping[str, SdfGrid] | None = None,
    threads: int | None = None,
) -> list[MetricsReport]:
    """One row per (variant, scene): the filter runs with each placing-set
    variant under a fixed execution budget of ``k`` grasps, and labels come from
    the oracle over that same variant."""
    rows = []
    for scene in scenes:
        sets = dict(set_variants(scene.placing_set))
        if external and scene.name in external:
            sets["external"] = external[scene.name]
        cands = candidates[scene.name]
        grid = (grids or {}).get(scene.name) or scene_grid(scene)
        for name in variant_names:
            if name not in sets:
                if name == "external":
                    continue
                raise ValueError(f"{scene.name}: placing set has no {name!r} variant")
            s = sets[name]
            labels = label_ground_truth(scene, cands, density, placing_set=s)
            res = filter_scene(scene, cands, grid, placing_set=s, threads=threads)
            ex = run_ours(cands, res, labels, k, fill=True)
            rows.append(compute_metrics(ex, labels, scene.task, name, scene.name))
    return rows


# output


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def metrics_csv(rows: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.task or "", r.scenario or "", r.method, r.executed_count, r.achieved_count,
                    r.achievable_count, _fmt(r.success_rate), _fmt(r.recall)])
    return buf.getvalue()


def metrics_json(rows: Sequence[MetricsReport]) -> str:
    data = [
        {
            "task": r.task, "scenario": r.scenario, "method": r.method,
            "executed": r.executed_count, "achieved": r.achieved_count, "achievable": r.achievable_count,
            "success_rate": None if r.success_rate is None else round(r.success_rate, 4),
            "recall": None if r.recall is None else round(r.recall, 4),
        }
        for r in rows
    ]
    return json.dumps(data, indent=2) + "\n"


def write_metrics(rows: Sequence[MetricsReport], csv_path: str | Path) -> Path:
    """Write the CSV and its JSON mirror next to it; returns the JSON path."""
    csv_path = Path(csv_path)
    csv_path.write_text(metrics_csv(rows), encoding="utf-8")
    json_path = csv_path.with_suffix(".json")
    json_path.write_text(metrics_json(rows), encoding="utf-8")
    return json_path


def external_subset(s: PlacingSet, n: int = 5, seed: int = 0) -> PlacingSet:
    """A discrete set of ``n`` poses drawn without replacement from ``s``'s lattice,
    standing in for poses produced by an external placement generator."""
    poses = enumerate_poses(s)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(poses), size=min(n, len(poses)), replace=False))
    return discrete([poses[i] for i in idx])


# benchmark protocol: candidate pools per scenario

MAIN_POOL = 11
MAIN_SEED = 100
ABLATION_POOL = 40
ABLATION_SEED = 200


def preset_candidates(scene: Scene, index: int, n: int = MAIN_POOL, seed_base: int = MAIN_SEED) -> list[GraspCandidate]:
    return sample_candidates(scene, n, seed_base + index)
