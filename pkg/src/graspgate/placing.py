"""Placing sets: enumerable families of valid object poses at placement.

Continuous sets (linear, rotational) are offsets applied in the world frame
to a canonical ``base_pose``; a product composes one offset from each factor
(second factor first, first factor last) around the shared base.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import EmptySet, InvalidSet, NestedProduct, ParseError
from .se3 import Pose, compose, inverse, pose_from_dict, pose_to_dict, rotation, translation

KINDS = ("discrete", "linear", "rotational", "product")
DEFAULT_LINEAR_STEP = 0.02
DEFAULT_ANGULAR_STEP = math.radians(15.0)


@dataclass(frozen=True, eq=False)
class PlacingSet:
    kind: str
    base_pose: Pose | None = None
    axis: tuple[float, float, float] | None = None
    anchor_point: tuple[float, float, float] | None = None
    lo: float = 0.0
    hi: float = 0.0
    samples: int = 1
    members: tuple[Pose, ...] = ()
    factors: tuple["PlacingSet", "PlacingSet"] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSet(f"unknown placing set kind {self.kind!r}")
        if self.kind in ("linear", "rotational"):
            if self.base_pose is None or self.axis is None:
                raise InvalidSet(f"{self.kind} set needs base_pose and axis")
            if abs(float(np.linalg.norm(self.axis)) - 1.0) > 1e-9:
                raise InvalidSet("axis must have unit norm")
            if self.kind == "rotational" and self.anchor_point is None:
                raise InvalidSet("rotational set needs an anchor_point")
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
                raise InvalidSet(f"invalid range [{self.lo}, {self.hi}]")
            if int(self.samples) != self.samples or self.samples < 1:
                raise InvalidSet("samples must be a positive integer")
            if self.samples == 1 and self.lo != self.hi:
                raise InvalidSet("a single sample requires lo == hi")
        elif self.kind == "discrete":
            if not self.members:
                raise InvalidSet("discrete set has no members")
            object.__setattr__(self, "members", tuple(self.members))
        else:
            if self.factors is None or len(self.factors) != 2:
                raise InvalidSet("product set needs two factors")
            if any(f.kind == "product" for f in self.factors):
                raise NestedProduct("product factors cannot be products")

    # parameters / offsets

    def parameters(self) -> np.ndarray:
        if self.kind not in ("linear", "rotational"):
            raise InvalidSet(f"{self.kind} set has no scalar parameter")
        if self.samples == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, int(self.samples))

    def offset(self, value: float) -> Pose:
        if self.kind == "linear":
            return translation(*(value * np.asarray(self.axis)))
        if self.kind == "rotational":
            return rotation(self.axis, value, self.anchor_point)
        raise InvalidSet(f"{self.kind} set has no parametric offset")

    def __len__(self) -> int:
        if self.kind == "discrete":
            return len(self.members)
        if self.kind == "product":
            return len(self.factors[0]) * len(self.factors[1])
        return int(self.samples)

    def densified(self, factor: int) -> "PlacingSet":
        """Same family sampled ``factor`` times more finely; contains the original lattice."""
        if factor < 1:
            raise ValueError("densification factor must be >= 1")
        if self.kind in ("linear", "rotational"):
            if self.samples == 1:
                return self
            return replace(self, samples=(int(self.samples) - 1) * factor + 1)
        if self.kind == "product":
            a, b = self.factors
            return replace(self, factors=(a.densified(factor), b.densified(factor)))
        return self

    def resampled(self, overrides: Mapping[str, int]) -> "PlacingSet":
        """Apply per-kind sample-count overrides (``{"linear": n, "rotational": m}``)."""
        if not overrides:
            return self
        if self.kind in ("linear", "rotational") and self.kind in overrides:
            n = int(overrides[self.kind])
            return replace(self, samples=n) if self.lo != self.hi else self
        if self.kind == "product":
            a, b = self.factors
            return replace(self, factors=(a.resampled(overrides), b.resampled(overrides)))
        return self

    def moved(self, pose: Pose) -> "PlacingSet":
        """The same set after a rigid motion of the whole scene."""
        R = pose.rotation
        if self.kind == "discrete":
            return replace(self, members=tuple(compose(pose, m) for m in self.members))
        if self.kind == "product":
            a, b = self.factors
            return replace(self, factors=(a.moved(pose), b.moved(pose)))
        axis = tuple(float(v) for v in R @ np.asarray(self.axis))
        anchor = None if self.anchor_point is None else tuple(float(v) for v in pose.apply(np.asarray(self.anchor_point)))
        return replace(self, base_pose=compose(pose, self.base_pose), axis=axis, anchor_point=anchor)


def _unit(axis: Sequence[float]) -> tuple[float, float, float]:
    a = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(a))
    if a.shape != (3,) or not math.isfinite(n) or n == 0:
        raise InvalidSet(f"invalid axis {axis}")
    return tuple(float(v) for v in a / n)


def _count(lo: float, hi: float, step: float) -> int:
    return int(round((hi - lo) / step)) + 1


def linear(base_pose: Pose, axis: Sequence[float], lo: float, hi: float, samples: int | None = None) -> PlacingSet:
    if samples is None:
        samples = _count(lo, hi, DEFAULT_LINEAR_STEP)
    return PlacingSet("linear", base_pose=base_pose, axis=_unit(axis), lo=float(lo), hi=float(hi), samples=samples)


def rotational(
    base_pose: Pose,
    axis: Sequence[float],
    anchor_point: Sequence[float],
    lo: float,
    hi: float,
    samples: int | None = None,
) -> PlacingSet:
    if samples is None:
        samples = _count(lo, hi, DEFAULT_ANGULAR_STEP)
    anchor = tuple(float(v) for v in anchor_point)
    return PlacingSet(
        "rotational", base_pose=base_pose, axis=_unit(axis), anchor_point=anchor, lo=float(lo), hi=float(hi), samples=samples
    )


def discrete(members: Sequence[Pose]) -> PlacingSet:
    return PlacingSet("discrete", members=tuple(members))


def product(a: PlacingSet, b: PlacingSet) -> PlacingSet:
    if a.kind == "product" or b.kind == "product":
        raise NestedProduct("cannot take the product of a product set")
    return PlacingSet("product", factors=(a, b))


def _shared_base(s: PlacingSet) -> Pose:
    a, b = s.factors
    for f in (a, b):
        if f.kind != "discrete":
            return f.base_pose
    return Pose.identity()


def _offsets(f: PlacingSet, base: Pose) -> list[Pose]:
    if f.kind == "discrete":
        inv = inverse(base)
        return [compose(m, inv) for m in f.members]
    return [f.offset(v) for v in f.parameters()]


def enumerate_poses(s: PlacingSet) -> list[Pose]:
    """All placing poses of ``s`` in deterministic order."""
    if s.kind == "discrete":
        return list(s.members)
    if s.kind in ("linear", "rotational"):
        return [compose(s.offset(v), s.base_pose) for v in s.parameters()]
    a, b = s.factors
    base = _shared_base(s)
    for f in (a, b):
        if f.kind != "discrete" and np.max(np.abs(f.base_pose.as_matrix() - base.as_matrix())) > 1e-9:
            raise InvalidSet("product factors must share the same base pose")
    offs_b = _offsets(b, base)
    out = []
    for oa in _offsets(a, base):
        for ob in offs_b:
            out.append(compose(oa, compose(ob, base)))
    return out


def variants(s: PlacingSet) -> dict[str, PlacingSet]:
    """Ablation variants of a product set: each factor alone and the product."""
    if s.kind != "product":
        return {s.kind: s}
    a, b = s.factors
    out = {"product": s}
    for f in (a, b):
        out.setdefault(f.kind, f)
    return out


# serialization


def to_dict(s: PlacingSet) -> dict[str, Any]:
    if s.kind == "discrete":
        return {"kind": "discrete", "members": [pose_to_dict(m) for m in s.members]}
    if s.kind == "product":
        return {"kind": "product", "factors": [to_dict(f) for f in s.factors]}
    d: dict[str, Any] = {"kind": s.kind, "base_pose": pose_to_dict(s.base_pose), "axis": list(s.axis)}
    if s.kind == "rotational":
        d["anchor_point"] = list(s.anchor_point)
    d["range"] = [s.lo, s.hi]
    d["samples"] = int(s.samples)
    return d


def from_dict(d: Mapping[str, Any], where: str = "placing_set") -> PlacingSet:
    if not isinstance(d, Mapping) or "kind" not in d:
        raise ParseError(f"{where}: missing field 'kind'")
    kind = d["kind"]
    try:
        if kind == "discrete":
            members = d.get("members")
            if not members:
                raise EmptySet(f"{where}: discrete set has no members")
            return discrete([pose_from_dict(m, f"{where}.members[{i}]") for i, m in enumerate(members)])
        if kind == "product":
            fs = d.get("factors")
            if not isinstance(fs, list) or len(fs) != 2:
                raise ParseError(f"{where}: product needs exactly two factors")
            return product(from_dict(fs[0], f"{where}.factors[0]"), from_dict(fs[1], f"{where}.factors[1]"))
        if kind in ("linear", "rotational"):
            for key in ("base_pose", "axis", "range", "samples"):
                if key not in d:
                    raise ParseError(f"{where}: missing field '{key}'")
            base = pose_from_dict(d["base_pose"], f"{where}.base_pose")
            lo, hi = (float(v) for v in d["range"])
            if kind == "linear":
                return linear(base, d["axis"], lo, hi, int(d["samples"]))
            if "anchor_point" not in d:
                raise ParseError(f"{where}: missing field 'anchor_point'")
            return rotational(base, d["axis"], d["anchor_point"], lo, hi, int(d["samples"]))
    except InvalidSet as exc:
        raise ParseError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None
    raise ParseError(f"{where}: unknown kind {kind!r}")


def load_external(path: str | Path) -> PlacingSet:
    """Read a JSON pose list (``[{position, quaternion}, ...]``) as a discrete set."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of poses")
    if not data:
        raise EmptySet(f"{path}: pose list is empty")
    return discrete([pose_from_dict(m, f"{path}[{i}]") for i, m in enumerate(data)])


def save_external(poses: Sequence[Pose], path: str | Path) -> None:
    text = json.dumps([pose_to_dict(p) for p in poses], indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")
