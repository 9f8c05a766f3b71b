"""Environment occupancy as analytic primitives and a baked voxel SDF.

Sign convention: positive outside occupied space, negative inside. A grid
stores the exact min-over-primitives distance at every node and answers
point queries by trilinear interpolation.
"""
from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BoundsTooSmall, EmptyPointSet, GraspGateError, OutOfBounds, ResolutionTooCoarse
from .se3 import Pose

log = logging.getLogger(__name__)

FREE_SPACE = float(np.finfo(float).max)
PRIMITIVE_KINDS = ("box", "cylinder", "sphere")
_DIM_COUNT = {"box": 3, "cylinder": 2, "sphere": 1}
# slack on the query domain so points landing on the margin by round-off stay valid
_EDGE_SLACK = 1e-9


class Bounds(NamedTuple):
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def of(cls, lo: Sequence[float], hi: Sequence[float]) -> "Bounds":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError(f"invalid bounds {lo} .. {hi}")
        return cls(lo, hi)

    def inflate(self, margin: float) -> "Bounds":
        return Bounds(self.lo - margin, self.hi + margin)

    def contains(self, other: "Bounds", tol: float = 1e-12) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def transformed(self, pose: Pose) -> "Bounds":
        """Axis-aligned bounds of this box after a rigid motion."""
        corners = np.array([[x, y, z] for x in (self.lo[0], self.hi[0])
                            for y in (self.lo[1], self.hi[1]) for z in (self.lo[2], self.hi[2])])
        moved = pose.apply(corners)
        return Bounds(moved.min(axis=0), moved.max(axis=0))


@dataclass(frozen=True, eq=False)
class PrimitiveShape:
    """Box (half-extents), cylinder (radius, half-height along local z) or sphere (radius)."""

    kind: str
    dims: tuple[float, ...]
    pose: Pose = field(default_factory=Pose.identity)
    region: str | None = None

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != _DIM_COUNT[self.kind]:
            raise ValueError(f"{self.kind} needs {_DIM_COUNT[self.kind]} dimensions, got {len(dims)}")
        if not all(d > 0 and math.isfinite(d) for d in dims):
            raise ValueError(f"{self.kind} dimensions must be positive: {dims}")
        object.__setattr__(self, "dims", dims)
        # plain floats: numpy scalar indexing dominates single-point queries
        R, t = self.pose.rotation, self.pose.translation
        object.__setattr__(self, "_frame", (*map(float, t), *map(float, R.ravel())))

    def aabb(self) -> Bounds:
        R, c = self.pose.rotation, self.pose.translation
        if self.kind == "box":
            half = np.abs(R) @ np.asarray(self.dims)
        elif self.kind == "cylinder":
            r, h = self.dims
            a = R[:, 2]
            half = np.abs(a) * h + r * np.sqrt(np.clip(1.0 - a * a, 0.0, None))
        else:
            half = np.full(3, self.dims[0])
        return Bounds(c - half, c + half)

    def moved(self, pose: Pose) -> "PrimitiveShape":
        return PrimitiveShape(self.kind, self.dims, pose @ self.pose, self.region)


@dataclass(frozen=True)
class EnvironmentModel:
    primitives: tuple[PrimitiveShape, ...] = ()
    free_space: bool = False

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives and not self.free_space:
            raise ValueError("empty environment must be flagged as free space")

    def moved(self, pose: Pose) -> "EnvironmentModel":
        return EnvironmentModel(tuple(p.moved(pose) for p in self.primitives), self.free_space)


def _local_coords(frame: tuple[float, ...], points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # written out per component so results do not depend on array size or chunking
    tx, ty, tz, r00, r01, r02, r10, r11, r12, r20, r21, r22 = frame
    dx = points[..., 0] - tx
    dy = points[..., 1] - ty
    dz = points[..., 2] - tz
    lx = r00 * dx + r10 * dy + r20 * dz
    ly = r01 * dx + r11 * dy + r21 * dz
    lz = r02 * dx + r12 * dy + r22 * dz
    return lx, ly, lz


def analytic_sdf(shape: PrimitiveShape, points: np.ndarray) -> np.ndarray | float:
    """Exact signed distance from ``points`` (..., 3) to ``shape``."""
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    lx, ly, lz = _local_coords(shape._frame, np.atleast_2d(pts))
    if shape.kind == "box":
        hx, hy, hz = shape.dims
        qx, qy, qz = np.abs(lx) - hx, np.abs(ly) - hy, np.abs(lz) - hz
        outside = np.sqrt(np.maximum(qx, 0) ** 2 + np.maximum(qy, 0) ** 2 + np.maximum(qz, 0) ** 2)
        inside = np.minimum(np.maximum(np.maximum(qx, qy), qz), 0.0)
        d = outside + inside
    elif shape.kind == "cylinder":
        r, h = shape.dims
        qr = np.sqrt(lx * lx + ly * ly) - r
        qz = np.abs(lz) - h
        d = np.sqrt(np.maximum(qr, 0) ** 2 + np.maximum(qz, 0) ** 2) + np.minimum(np.maximum(qr, qz), 0.0)
    else:
        d = np.sqrt(lx * lx + ly * ly + lz * lz) - shape.dims[0]
    return float(d[0]) if scalar else d


def _point_sdf(shape: PrimitiveShape, x: float, y: float, z: float) -> float:
    """Single-point twin of :func:`analytic_sdf`, same operations in the same order."""
    tx, ty, tz, r00, r01, r02, r10, r11, r12, r20, r21, r22 = shape._frame
    dx, dy, dz = x - tx, y - ty, z - tz
    lx = r00 * dx + r10 * dy + r20 * dz
    ly = r01 * dx + r11 * dy + r21 * dz
    lz = r02 * dx + r12 * dy + r22 * dz
    if shape.kind == "box":
        hx, hy, hz = shape.dims
        qx, qy, qz = abs(lx) - hx, abs(ly) - hy, abs(lz) - hz
        mx, my, mz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
        return math.sqrt(mx * mx + my * my + mz * mz) + min(max(qx, qy, qz), 0.0)
    if shape.kind == "cylinder":
        r, h = shape.dims
        qr = math.sqrt(lx * lx + ly * ly) - r
        qz = abs(lz) - h
        mr, mz = max(qr, 0.0), max(qz, 0.0)
        return math.sqrt(mr * mr + mz * mz) + min(max(qr, qz), 0.0)
    return math.sqrt(lx * lx + ly * ly + lz * lz) - shape.dims[0]


def union_sdf(shapes: Iterable[PrimitiveShape], points: np.ndarray) -> np.ndarray:
    """Exact min over shapes; ``FREE_SPACE`` where there are none."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 3:
        x, y, z = (float(v) for v in pts.reshape(3))
        d = FREE_SPACE
        for s in shapes:
            d = min(d, _point_sdf(s, x, y, z))
        return np.full(pts.shape[:-1], d)
    out = np.full(pts.shape[:-1], FREE_SPACE)
    for s in shapes:
        np.minimum(out, analytic_sdf(s, pts), out=out)
    return out


def environment_sdf(env: EnvironmentModel, points: np.ndarray) -> np.ndarray:
    return union_sdf(env.primitives, points)


@dataclass(frozen=True, eq=False)
class SdfGrid:
    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]
    values: np.ndarray  # shape == dims, indexed [ix, iy, iz]

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float)
        values = np.ascontiguousarray(np.array(self.values, dtype=float))
        dims = tuple(int(d) for d in self.dims)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if len(dims) != 3 or min(dims) < 2 or values.shape != dims:
            raise ValueError(f"grid dims {dims} do not match values {values.shape}")
        origin.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.asarray(self.dims) - 1) * self.resolution

    def node(self, i: int, j: int, k: int) -> np.ndarray:
        return self.origin + np.array([i, j, k]) * self.resolution

    def query_domain(self) -> Bounds:
        """Region where queries are defined: the grid shrunk by one voxel."""
        return Bounds(self.origin + self.resolution, self.upper - self.resolution)

    def in_domain(self, points: np.ndarray) -> np.ndarray:
        dom = self.query_domain()
        pts = np.atleast_2d(points)
        return np.all((pts >= dom.lo - _EDGE_SLACK) & (pts <= dom.hi + _EDGE_SLACK), axis=-1)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Trilinear values at ``points`` (N, 3); NaN outside the query domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = self.in_domain(pts)
        f = (pts - self.origin) / self.resolution
        idx = np.clip(np.floor(f).astype(np.int64), 0, np.asarray(self.dims) - 2)
        t = f - idx
        i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        v = self.values

        def lerp(a, b, s):
            return a + s * (b - a)

        c00 = lerp(v[i, j, k], v[i + 1, j, k], tx)
        c10 = lerp(v[i, j + 1, k], v[i + 1, j + 1, k], tx)
        c01 = lerp(v[i, j, k + 1], v[i + 1, j, k + 1], tx)
        c11 = lerp(v[i, j + 1, k + 1], v[i + 1, j + 1, k + 1], tx)
        out = lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz)
        out[~ok] = np.nan
        return out

    def dump(self, path: str | Path) -> None:
        """Write the binary debug format (little-endian, x-fastest values)."""
        header = b"SDFG" + struct.pack("<3I", *self.dims) + struct.pack("<3d", *self.origin)
        header += struct.pack("<d", self.resolution)
        body = np.asarray(self.values, dtype="<f8").ravel(order="F").tobytes()
        Path(path).write_bytes(header + body)

    @classmethod
    def load(cls, path: str | Path) -> "SdfGrid":
        raw = Path(path).read_bytes()
        if raw[:4] != b"SDFG":
            raise GraspGateError(f"{path}: not an SDFG grid dump")
        dims = struct.unpack_from("<3I", raw, 4)
        origin = struct.unpack_from("<3d", raw, 16)
        (res,) = struct.unpack_from("<d", raw, 40)
        values = np.frombuffer(raw, dtype="<f8", offset=48)
        if values.size != int(np.prod(dims)):
            raise GraspGateError(f"{path}: truncated grid dump")
        return cls(np.array(origin), res, dims, values.reshape(dims, order="F"))


def query(grid: SdfGrid, point: Sequence[float]) -> float:
    """Trilinear SDF value at one point. Raises :class:`OutOfBounds` outside the query domain."""
    value = grid.interpolate(np.asarray(point, dtype=float).reshape(1, 3))[0]
    if math.isnan(value):
        raise OutOfBounds(f"point {list(point)} outside grid query domain")
    return float(value)


def clearance(grid: SdfGrid, points: np.ndarray) -> float:
    """Minimum SDF over ``points``; ``-inf`` if any point is out of bounds."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise EmptyPointSet("clearance needs at least one point")
    vals = grid.interpolate(pts)
    if np.isnan(vals).any():
        return -math.inf
    return float(vals.min())


def grid_dims(bounds: Bounds, resolution: float) -> tuple[int, int, int]:
    n = np.ceil((bounds.hi - bounds.lo) / resolution - 1e-9).astype(int) + 1
    return tuple(int(max(2, v)) for v in n)


def bake(
    env: EnvironmentModel,
    bounds: Bounds,
    resolution: float,
    *,
    margin: float = 0.0,
    d_safe: float | None = None,
    workers: int = 1,
) -> SdfGrid:
    """Sample the exact environment SDF on a regular lattice covering ``bounds``.

    ``margin`` is the inflation every primitive must keep from the bounds
    (normally gripper diagonal plus ``d_safe``). When ``d_safe`` is given the
    resolution may not exceed it.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if d_safe is not None and resolution > d_safe:
        raise ResolutionTooCoarse(f"resolution {resolution} exceeds d_safe {d_safe}")
    for i, prim in enumerate(env.primitives):
        box = prim.aabb().inflate(margin)
        if not bounds.contains(box):
            raise BoundsTooSmall(
                f"primitive {i} ({prim.kind}) inflated by {margin} m leaves bounds "
                f"{bounds.lo.tolist()}..{bounds.hi.tolist()}"
            )
    dims = grid_dims(bounds, resolution)
    origin = bounds.lo.copy()
    values = np.empty(dims)
    ys = origin[1] + np.arange(dims[1]) * resolution
    zs = origin[2] + np.arange(dims[2]) * resolution

    def fill(ix: int) -> None:
        x = origin[0] + ix * resolution
        pts = np.empty((dims[1], dims[2], 3))
        pts[..., 0] = x
        pts[..., 1] = ys[:, None]
        pts[..., 2] = zs[None, :]
        values[ix] = environment_sdf(env, pts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(dims[0])))
    else:
        for ix in range(dims[0]):
            fill(ix)
    return SdfGrid(origin, resolution, dims, values)
