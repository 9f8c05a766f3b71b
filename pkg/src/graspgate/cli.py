"""Batch command line: generate scenes, bake grids, sample, filter, evaluate, ablate.

Exit codes: 0 ok, 2 infeasible scenario, 3 no feasible grasp, 64 usage, 65 parse error.
Every command writes ``<out>.manifest.json`` next to its output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from . import evaluation as ev
from . import placing, sampler, scenes
from .errors import GraspGateError, InfeasibleScenario, ParseError
from .grasp_filter import FilterConfig, filter_grasps, load_candidates, save_candidates, write_report
from .gripper import build_body
from .sdf import SdfGrid

EXIT_OK, EXIT_INFEASIBLE, EXIT_NO_GRASP, EXIT_USAGE, EXIT_PARSE, EXIT_ERROR = 0, 2, 3, 64, 65, 1

log = logging.getLogger("graspgate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class _Run:
    """Collects inputs, config and stage timings for the manifest."""

    def __init__(self, command: str, seed: int | None):
        self.command = command
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.config: dict[str, Any] = {}
        self.timing: dict[str, int] = {}

    def input(self, path: str | Path) -> Path:
        p = Path(path)
        try:
            self.inputs[str(path)] = hashlib.sha256(p.read_bytes()).hexdigest()
        except FileNotFoundError:
            raise ParseError(f"{path}: file not found") from None
        return p

    @contextmanager
    def stage(self, name: str):
        t = time.perf_counter()
        yield
        self.timing[name] = int(round((time.perf_counter() - t) * 1000))

    def write(self, out: str | Path) -> None:
        data = {
            "tool_version": __version__,
            "command": self.command,
            "inputs": self.inputs,
            "seed": self.seed,
            "config": self.config,
            "timing_ms": self.timing,
        }
        Path(f"{out}.manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_grid(run: _Run, args, scene: scenes.Scene) -> SdfGrid:
    if getattr(args, "grid", None):
        return SdfGrid.load(run.input(args.grid))
    with run.stage("bake"):
        return scenes.scene_grid(scene, args.resolution, workers=args.threads or 1)


def _scene(run: _Run, path: str) -> scenes.Scene:
    run.input(path)
    return scenes.load_scene(path)


def _methods(text: str) -> list[str]:
    ms = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in ms if m not in ev.METHODS]
    if bad or not ms:
        raise UsageError(f"--methods must be a subset of {','.join(ev.METHODS)}")
    return ms


# commands


def cmd_gen(args) -> int:
    run = _Run("gen", args.seed)
    params: dict[str, Any] = {}
    if args.preset is not None:
        if not 1 <= args.preset <= len(scenes.PRESETS[args.task]):
            raise UsageError(f"--preset must be in 1..{len(scenes.PRESETS[args.task])}")
        params.update(scenes.PRESETS[args.task][args.preset - 1])
    if args.params:
        try:
            extra = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise ParseError(f"--params: {exc}") from None
        if not isinstance(extra, dict):
            raise ParseError("--params: expected a JSON object")
        params.update(extra)
    if args.d_safe is not None:
        params["d_safe"] = args.d_safe
    name = args.name or (f"{args.task}-{args.preset}" if args.preset else f"{args.task}-s{args.seed}")
    run.config = {"task": args.task, "preset": args.preset, "params": params, "name": name}
    with run.stage("generate"):
        scene = scenes.generate_scene(scenes.TaskScenario(args.task, params, args.seed, name))
    scenes.save_scene(scene, args.out)
    run.write(args.out)
    return EXIT_OK


def cmd_bake(args) -> int:
    run = _Run("bake", None)
    scene = _scene(run, args.scene)
    run.config = {"resolution": args.resolution or scene.d_safe / 2}
    grid = _load_grid(run, args, scene)
    grid.dump(args.out)
    run.write(args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    run = _Run("sample", args.seed)
    scene = _scene(run, args.scene)
    run.config = {"n": args.n}
    with run.stage("sample"):
        cands = sampler.sample_candidates(scene, args.n, args.seed)
    save_candidates(cands, args.out)
    run.write(args.out)
    return EXIT_OK


def _filter_config(args, scene) -> FilterConfig:
    samples = {}
    if args.linear_samples:
        samples["linear"] = args.linear_samples
    if args.rotational_samples:
        samples["rotational"] = args.rotational_samples
    d_safe = scene.d_safe if args.d_safe is None else args.d_safe
    return FilterConfig(d_safe=d_safe, placing_samples=samples, check_pick=not args.no_pick_check, threads=args.threads)


def cmd_filter(args) -> int:
    run = _Run("filter", None)
    scene = _scene(run, args.scene)
    run.input(args.candidates)
    cands = load_candidates(args.candidates)
    cfg = _filter_config(args, scene)
    run.config = {"d_safe": cfg.d_safe, "resolution": args.resolution or scene.d_safe / 2,
                  "placing_samples": dict(cfg.placing_samples), "check_pick": cfg.check_pick}
    grid = _load_grid(run, args, scene)
    with run.stage("filter"):
        res = filter_grasps(cands, scene.x0, scene.placing_set, grid, build_body(scene.gripper), cfg)
    write_report(res, args.out)
    run.write(args.out)
    if res.selected is None:
        log.warning("no feasible grasp among %d candidates", len(cands))
        return EXIT_NO_GRASP
    return EXIT_OK


def cmd_label(args) -> int:
    run = _Run("label", None)
    scene = _scene(run, args.scene)
    run.input(args.candidates)
    cands = load_candidates(args.candidates)
    run.config = {"density": args.density}
    with run.stage("label"):
        labels = ev.label_ground_truth(scene, cands, args.density, workers=args.threads or 1)
    data = [{"candidate_id": lab.candidate_id, "pick_success": lab.pick_success,
             "task_achievable": lab.task_achievable} for lab in labels.values()]
    Path(args.out).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    run.write(args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    methods = _methods(args.methods)
    run = _Run("eval", None)
    scene = _scene(run, args.scene)
    run.input(args.candidates)
    cands = load_candidates(args.candidates)
    run.config = {"methods": methods, "k": args.k, "density": args.density,
                  "resolution": args.resolution or scene.d_safe / 2}
    grid = _load_grid(run, args, scene) if "ours" in methods else None
    with run.stage("label"):
        labels = ev.label_ground_truth(scene, cands, args.density, workers=args.threads or 1)
    with run.stage("evaluate"):
        rows = ev.evaluate_scene(scene, cands, methods, args.k, grid=grid, labels=labels, threads=args.threads)
    ev.write_metrics(rows, args.out)
    run.write(args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    allowed = ("linear", "rotational", "product", "external")
    if not variants or any(v not in allowed for v in variants):
        raise UsageError(f"--variants must be a subset of {','.join(allowed)}")
    run = _Run("ablate", args.seed)
    if args.scene:
        family = [_scene(run, p) for p in args.scene]
    elif args.family:
        family = scenes.preset_scenes(args.family)
    else:
        raise UsageError("ablate needs --scene or --family")
    if args.candidates and len(args.candidates) != len(family):
        raise UsageError("give one --candidates file per scene")
    external = {}
    if "external" in variants:
        paths = args.external or []
        if len(paths) != len(family):
            raise ParseError("the external variant needs one --external pose file per scene")
        for sc, p in zip(family, paths):
            run.input(p)
            external[sc.name] = placing.load_external(p)
    cands = {}
    with run.stage("sample"):
        for i, sc in enumerate(family):
            if args.candidates:
                run.input(args.candidates[i])
                cands[sc.name] = load_candidates(args.candidates[i])
            else:
                cands[sc.name] = sampler.sample_candidates(sc, args.n, args.seed + i)
    run.config = {"variants": variants, "k": args.k, "density": args.density, "n": args.n,
                  "scenes": [sc.name for sc in family]}
    with run.stage("ablate"):
        rows = ev.run_ablation(family, cands, variants, external, args.k, args.density, threads=args.threads)
    ev.write_metrics(rows, args.out)
    run.write(args.out)
    return EXIT_OK


def cmd_external(args) -> int:
    run = _Run("external", args.seed)
    scene = _scene(run, args.scene)
    run.config = {"n": args.n}
    s = ev.external_subset(scene.placing_set, args.n, args.seed)
    placing.save_external(s.members, args.out)
    run.write(args.out)
    return EXIT_OK


# parser


def _add_common(p, *, scene=True, grid=False):
    if scene:
        p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--threads", type=int, default=None, help="worker cap (outputs do not depend on it)")
    if grid:
        p.add_argument("--grid", help="pre-baked SDF grid (otherwise baked from the scene)")
        p.add_argument("--resolution", type=float, default=None, help="grid voxel size in metres (default d_safe/2)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="graspgate", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"graspgate {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a scene")
    p.add_argument("--task", required=True, choices=scenes.TASKS)
    p.add_argument("--preset", type=int, default=None, help="preset number 1..5")
    p.add_argument("--params", help="JSON object overriding scenario parameters")
    p.add_argument("--name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-safe", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bake", help="bake the scene environment into an SDF grid")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("sample", help="sample grasp candidates on the scene object")
    _add_common(p)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("filter", help="filter candidates and select a grasp")
    _add_common(p, grid=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--d-safe", type=float, default=None)
    p.add_argument("--linear-samples", type=int, default=None)
    p.add_argument("--rotational-samples", type=int, default=None)
    p.add_argument("--no-pick-check", action="store_true")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("label", help="oracle ground-truth labels")
    _add_common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--density", type=int, default=ev.ORACLE_DENSITY)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="success rate and recall per method")
    _add_common(p, grid=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--methods", default="ours,vanilla,sodg")
    p.add_argument("--k", type=int, default=ev.DEFAULT_K)
    p.add_argument("--density", type=int, default=ev.ORACLE_DENSITY)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="placing-set ablation over a scene family")
    p.add_argument("--scene", action="append", help="scene file (repeatable)")
    p.add_argument("--family", choices=scenes.TASKS, help="use the task's shipped presets")
    p.add_argument("--candidates", action="append", help="candidate file per scene (repeatable)")
    p.add_argument("--external", action="append", help="external pose list per scene (repeatable)")
    p.add_argument("--variants", default="linear,rotational,product")
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=ev.DEFAULT_K)
    p.add_argument("--density", type=int, default=ev.ORACLE_DENSITY)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("external", help="write a discrete pose subset of the scene's placing set")
    _add_common(p)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_external)
    return ap


def _setup_logging() -> None:
    level = os.environ.get("GRASPGATE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleScenario as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except GraspGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
