"""Parallel-jaw gripper occupancy as a sampled point lattice.

Gripper frame: origin at the grasp center midway between the finger pads,
+x is the closing axis, +z points from the fingers toward the palm. The
jaws span ``z in [-jaw_length/2, jaw_length/2]``; the palm sits on top.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .se3 import Pose


@dataclass(frozen=True)
class GripperSpec:
    jaw_opening: float = 0.08
    jaw_length: float = 0.045
    jaw_thickness: float = 0.01
    jaw_width: float = 0.02
    palm_depth: float = 0.03
    palm_width: float = 0.12
    palm_height: float = 0.04
    sample_spacing: float = 0.005

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"gripper {f.name} must be positive, got {v!r}")
        if self.sample_spacing > min(self.jaw_thickness, self.jaw_width) + 1e-15:
            raise ValueError("sample_spacing must not exceed min(jaw_thickness, jaw_width)")

    def boxes(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(lo, hi) corners of palm, left jaw and right jaw in the gripper frame."""
        half_open = self.jaw_opening / 2
        half_len = self.jaw_length / 2
        jy = self.jaw_width / 2
        palm = (
            np.array([-self.palm_width / 2, -self.palm_height / 2, half_len]),
            np.array([self.palm_width / 2, self.palm_height / 2, half_len + self.palm_depth]),
        )
        left = (
            np.array([-half_open - self.jaw_thickness, -jy, -half_len]),
            np.array([-half_open, jy, half_len]),
        )
        right = (
            np.array([half_open, -jy, -half_len]),
            np.array([half_open + self.jaw_thickness, jy, half_len]),
        )
        return [palm, left, right]

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        boxes = self.boxes()
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def diagonal(self) -> float:
        lo, hi = self.extent()
        return float(np.linalg.norm(hi - lo))

    def to_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def with_spacing(cls, spacing: float, **kw) -> "GripperSpec":
        return cls(sample_spacing=spacing, **kw)


@dataclass(frozen=True, eq=False)
class GripperBody:
    points: np.ndarray  # (N, 3) in the gripper frame
    spec: GripperSpec
    part_sizes: tuple[int, int, int]  # palm, left jaw, right jaw

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError("gripper body needs a non-empty (N, 3) point array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def _axis_samples(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = int(math.ceil((hi - lo) / spacing - 1e-9)) + 1
    return np.linspace(lo, hi, max(n, 2))


def box_lattice(lo: np.ndarray, hi: np.ndarray, spacing: float) -> np.ndarray:
    """Regular lattice over a box including its corners, x varying fastest."""
    xs, ys, zs = (_axis_samples(lo[a], hi[a], spacing) for a in range(3))
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def build_body(spec: GripperSpec) -> GripperBody:
    parts = [box_lattice(lo, hi, spec.sample_spacing) for lo, hi in spec.boxes()]
    return GripperBody(np.concatenate(parts), spec, tuple(len(p) for p in parts))


def posed_points(body: GripperBody, pose: Pose) -> np.ndarray:
    return pose.apply(body.points)
