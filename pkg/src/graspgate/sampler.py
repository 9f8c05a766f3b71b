"""Synthetic grasp candidates that stand in for a planar grasp detector.

Each attempt picks one of three world views, a random image point and an
in-plane closing angle. The ray through that point finds the first object
surface; the grasp centre sits a random depth below it, the jaws close along
the chosen direction and the contacts are found on the object's own SDF.
Quality scores how antipodal the contact normals are.
"""
from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from .errors import ObjectTooLarge
from .grasp_filter import GraspCandidate
from .gripper import GripperSpec, build_body
from .scenes import Scene, shape_aabb
from .sdf import PrimitiveShape, union_sdf
from .se3 import Pose, compose, inverse

log = logging.getLogger(__name__)

# palm directions of the three views (gripper +z points away from the object)
VIEWS = (np.array([0.0, 0.0, 1.0]), np.array([-1.0, 0.0, 0.0]), np.array([0.0, -1.0, 0.0]))
LINE_STEP = 5e-4
PICK_TOL = 1e-3


def _plane_basis(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def _bisect(f, a: float, b: float, fa_inside: bool, iters: int = 40) -> float:
    """Boundary between a and b where ``f(s) <= 0`` flips."""
    for _ in range(iters):
        m = 0.5 * (a + b)
        if (f(m) <= 0) == fa_inside:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _normal(shapes: Sequence[PrimitiveShape], p: np.ndarray, h: float = 1e-6) -> np.ndarray:
    offs = np.vstack([np.eye(3) * h, -np.eye(3) * h])
    v = union_sdf(shapes, p + offs)
    g = (v[:3] - v[3:]) / (2 * h)
    n = np.linalg.norm(g)
    return g / n if n > 0 else g


def closing_contacts(shapes: Sequence[PrimitiveShape], center: np.ndarray, direction: np.ndarray,
                     opening: float) -> tuple[np.ndarray, np.ndarray] | None | str:
    """Outermost object contacts along the closing line within the jaw opening.

    Returns ``None`` if the line misses the object and ``"wide"`` if the object
    fills the line at either jaw.
    """
    half = opening / 2
    s = np.arange(-half, half + LINE_STEP / 2, LINE_STEP)
    s[-1] = half
    vals = union_sdf(shapes, center + s[:, None] * direction)
    inside = vals <= 0
    if not inside.any():
        return None
    if inside[0] or inside[-1]:
        return "wide"
    i1 = int(np.argmax(inside))
    i2 = len(s) - 1 - int(np.argmax(inside[::-1]))

    def f(t):
        return float(union_sdf(shapes, (center + t * direction)[None])[0])

    a = _bisect(f, s[i1 - 1], s[i1], False)
    b = _bisect(f, s[i2 + 1], s[i2], False)
    return center + a * direction, center + b * direction


def contact_regions(shapes: Sequence[PrimitiveShape], grasp: Pose, opening: float) -> tuple[str | None, ...]:
    """Region labels of the primitives touched by the jaws of ``grasp`` (object frame)."""
    hit = closing_contacts(shapes, grasp.translation, grasp.rotation[:, 0], opening)
    if hit is None or isinstance(hit, str):
        pts = grasp.translation[None]
    else:
        pts = np.vstack(hit)
    out = []
    for p in pts:
        d = [abs(float(np.asarray(_single(s, p)))) for s in shapes]
        out.append(shapes[int(np.argmin(d))].region)
    return tuple(out)


def _single(shape: PrimitiveShape, p: np.ndarray) -> float:
    return float(union_sdf([shape], p[None])[0])


def pickable_in_isolation(shapes: Sequence[PrimitiveShape], body_points: np.ndarray, grasp: Pose,
                          tol: float = PICK_TOL) -> bool:
    """The open gripper does not penetrate the object (object frame)."""
    return bool(union_sdf(shapes, grasp.apply(body_points)).min() >= -tol)


def _first_hit(shapes, origin: np.ndarray, u: np.ndarray, length: float) -> np.ndarray | None:
    t = np.arange(0.0, length, LINE_STEP)
    vals = union_sdf(shapes, origin[None] - t[:, None] * u)
    inside = np.flatnonzero(vals <= 0)
    if not inside.size:
        return None
    i = int(inside[0])
    if i == 0:
        return origin

    def f(s):
        return float(union_sdf(shapes, (origin - s * u)[None])[0])

    return origin - _bisect(f, t[i - 1], t[i], False) * u


def sample_candidates(scene: Scene, n: int, seed: int = 0, *, max_attempts: int | None = None,
                      gripper: GripperSpec | None = None) -> list[GraspCandidate]:
    """Draw ``n`` pickable candidates (world frame, object at ``scene.x0``).

    Raises :class:`ObjectTooLarge` if no attempt yields a grasp the jaws can span.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    spec = gripper or scene.gripper
    body = build_body(spec).points
    shapes = scene.object_shape
    x0 = scene.x0
    rng = np.random.default_rng(seed)
    inv_x0 = inverse(x0)
    box = shape_aabb(shapes)
    radius = float(np.linalg.norm(np.maximum(np.abs(box.lo), np.abs(box.hi))))
    centre = 0.5 * (box.lo + box.hi)
    attempts = max_attempts or 400 * n
    out: list[GraspCandidate] = []
    wide = 0
    for _ in range(attempts):
        if len(out) == n:
            break
        # views are fixed in the world; express them in the object frame
        u = inv_x0.rotation @ VIEWS[int(rng.integers(len(VIEWS)))]
        e1, e2 = _plane_basis(u)
        a, b = rng.uniform(-radius, radius, size=2)
        origin = centre + a * e1 + b * e2 + (radius + 0.01) * u
        hit = _first_hit(shapes, origin, u, 2 * radius + 0.02)
        if hit is None:
            continue
        depth = rng.uniform(0.3, 0.5) * spec.jaw_length
        theta = rng.uniform(0.0, math.pi)
        close = math.cos(theta) * e1 + math.sin(theta) * e2
        c = hit - depth * u
        contacts = closing_contacts(shapes, c, close, spec.jaw_opening)
        if contacts is None:
            continue
        if isinstance(contacts, str):
            wide += 1
            continue
        p1, p2 = contacts
        n1, n2 = _normal(shapes, p1), _normal(shapes, p2)
        quality = float(np.clip(-np.dot(n1, n2), 0.0, 1.0))
        if quality <= 0.0:
            continue
        mid = c + close * 0.5 * (np.dot(p1 - c, close) + np.dot(p2 - c, close))
        R = np.column_stack([close, np.cross(u, close), u])
        g_obj = Pose(R, mid)
        if not pickable_in_isolation(shapes, body, g_obj):
            continue
        out.append(GraspCandidate(f"g{len(out):03d}", compose(x0, g_obj), round(quality, 6)))
    if not out:
        if wide:
            raise ObjectTooLarge(f"{scene.name}: object exceeds the jaw opening {spec.jaw_opening} m")
        raise ObjectTooLarge(f"{scene.name}: no graspable configuration found")
    if len(out) < n:
        log.warning("%s: only %d of %d candidates after %d attempts", scene.name, len(out), n, attempts)
    return out
