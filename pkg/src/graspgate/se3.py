"""Rigid-body pose algebra.

All poses live in one world frame. ``Pose(R, t)`` maps a point ``p`` expressed
in the pose's local frame to ``R @ p + t`` in the world, so ``compose(a, b)``
is the homogeneous product ``a @ b`` (apply ``b`` first, then ``a``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation

from .errors import InvalidPose, ParseError

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-9
QUAT_NORM_TOL = 1e-6
# quaternions this close to unit norm are kept bit-for-bit so files round-trip
_QUAT_VERBATIM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform in SE(3). Immutable."""

    rotation: np.ndarray
    translation: np.ndarray
    _quat: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidPose(f"bad shapes {R.shape}, {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidPose("non-finite pose")
        err = orthonormality_error(R)
        if err > ORTHO_TOL or np.linalg.det(R) <= 0:
            raise InvalidPose(f"rotation not in SO(3) (|R^T R - I| = {err:.3g})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if self._quat is not None:
            object.__setattr__(self, "_quat", _frozen(self._quat))

    # construction helpers

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray, orthonormalize: bool = False) -> "Pose":
        T = np.asarray(T, dtype=float)
        R = T[:3, :3]
        if orthonormalize:
            R = _nearest_rotation(R)
        return cls(R, T[:3, 3])

    @classmethod
    def from_quaternion(cls, position: Sequence[float], quaternion: Sequence[float]) -> "Pose":
        """Build from ``[x, y, z]`` and ``[qw, qx, qy, qz]``.

        Quaternions within 1e-6 of unit norm are normalized; anything further
        off is rejected with :class:`ParseError`.
        """
        q = np.asarray(quaternion, dtype=float)
        p = np.asarray(position, dtype=float)
        if q.shape != (4,) or p.shape != (3,):
            raise ParseError("position must have 3 entries and quaternion 4")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ParseError("non-finite pose entry")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise ParseError(f"quaternion norm {n!r} is not unit (tolerance {QUAT_NORM_TOL})")
        if abs(n - 1.0) > _QUAT_VERBATIM_TOL:
            q = q / n
        R = Rotation.from_quat(q, scalar_first=True).as_matrix()
        R = _nearest_rotation(R) if orthonormality_error(R) > ORTHO_TOL else R
        return cls(R, p, q)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``[qw, qx, qy, qz]`` with ``qw >= 0``."""
        if self._quat is not None:
            return self._quat
        return Rotation.from_matrix(self.rotation).as_quat(canonical=True, scalar_first=True)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map local points (N, 3) or (3,) into the world frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        return f"Pose(t={self.translation.tolist()}, q={self.quaternion().tolist()})"


def _nearest_rotation(R: np.ndarray) -> np.ndarray:
    U, _ = polar(R)
    if np.linalg.det(U) < 0:
        raise InvalidPose("reflection cannot be projected onto SO(3)")
    return U


def _make(R: np.ndarray, t: np.ndarray) -> Pose:
    if orthonormality_error(R) > ORTHO_TOL:
        log.warning("rotation drift above %g; re-orthonormalizing", ORTHO_TOL)
        R = _nearest_rotation(R)
    return Pose(R, t)


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a @ b``: apply ``b`` then ``a``."""
    return _make(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return _make(Rt.copy(), -(Rt @ p.translation))


def placing_grasp(g0: Pose, x0: Pose, xf: Pose) -> Pose:
    """Gripper pose at placement when the object moves rigidly from ``x0`` to ``xf``.

    The grasp is held without slip, so the gripper follows the same world
    displacement as the object: ``g_f = (x_f @ x0^-1) @ g0``.
    """
    return compose(compose(xf, inverse(x0)), g0)


def translation(x: float, y: float, z: float) -> Pose:
    return Pose(np.eye(3), np.array([x, y, z], dtype=float))


def axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def rotation(axis: Sequence[float], angle: float, center: Sequence[float] | None = None) -> Pose:
    """Rotation by ``angle`` radians about a line through ``center`` (origin by default)."""
    R = axis_angle(axis, angle)
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    return Pose(R, c - R @ c)


def rot_x(angle: float) -> Pose:
    return rotation((1, 0, 0), angle)


def rot_y(angle: float) -> Pose:
    return rotation((0, 1, 0), angle)


def rot_z(angle: float) -> Pose:
    return rotation((0, 0, 1), angle)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit quaternion ``[qw, qx, qy, qz]`` (Shoemake)."""
    u1, u2, u3 = rng.random(3)
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    t2, t3 = 2.0 * math.pi * u2, 2.0 * math.pi * u3
    return np.array([b * math.cos(t3), a * math.sin(t2), a * math.cos(t2), b * math.sin(t3)])


def random_pose(rng: np.random.Generator, extent: float = 1.0) -> Pose:
    q = random_quaternion(rng)
    t = rng.uniform(-extent, extent, size=3)
    R = Rotation.from_quat(q, scalar_first=True).as_matrix()
    return Pose(_nearest_rotation(R), t)


def pose_distance(a: Pose, b: Pose) -> float:
    """Max elementwise difference of the homogeneous matrices."""
    return float(np.max(np.abs(a.as_matrix() - b.as_matrix())))


def pose_to_dict(p: Pose) -> dict[str, list[float]]:
    return {
        "position": [float(v) for v in p.translation],
        "quaternion": [float(v) for v in p.quaternion()],
    }


def pose_from_dict(d: Mapping[str, Any], where: str = "pose") -> Pose:
    if not isinstance(d, Mapping):
        raise ParseError(f"{where}: expected an object with position and quaternion")
    for key in ("position", "quaternion"):
        if key not in d:
            raise ParseError(f"{where}: missing field '{key}'")
    try:
        return Pose.from_quaternion(d["position"], d["quaternion"])
    except ParseError as exc:
        raise ParseError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


def stack(poses: Sequence[Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Pack poses into (N, 3, 3) rotations and (N, 3) translations."""
    if not poses:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return (np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))
