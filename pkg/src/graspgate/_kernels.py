"""Compiled batch clearance: min trilinear SDF over a posed point set, per pose."""
from __future__ import annotations

import warnings

import numba
import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# numba probes every threading layer; an old system TBB only produces noise
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)


@njit(cache=True, parallel=True, fastmath=False)
def _batch_clearance(points, rots, trans, values, origin, res, lo, hi):
    n_pose = rots.shape[0]
    n_pt = points.shape[0]
    nx, ny, nz = values.shape
    out = np.empty(n_pose)
    for p in prange(n_pose):
        R = rots[p]
        t = trans[p]
        best = np.inf
        for q in range(n_pt):
            px, py, pz = points[q, 0], points[q, 1], points[q, 2]
            wx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
            wy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
            wz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
            if wx < lo[0] or wy < lo[1] or wz < lo[2] or wx > hi[0] or wy > hi[1] or wz > hi[2]:
                best = -np.inf
                break
            fx = (wx - origin[0]) / res
            fy = (wy - origin[1]) / res
            fz = (wz - origin[2]) / res
            i = min(max(int(np.floor(fx)), 0), nx - 2)
            j = min(max(int(np.floor(fy)), 0), ny - 2)
            k = min(max(int(np.floor(fz)), 0), nz - 2)
            tx = fx - i
            ty = fy - j
            tz = fz - k
            a = values[i, j, k]
            c00 = a + tx * (values[i + 1, j, k] - a)
            a = values[i, j + 1, k]
            c10 = a + tx * (values[i + 1, j + 1, k] - a)
            a = values[i, j, k + 1]
            c01 = a + tx * (values[i + 1, j, k + 1] - a)
            a = values[i, j + 1, k + 1]
            c11 = a + tx * (values[i + 1, j + 1, k + 1] - a)
            c0 = c00 + ty * (c10 - c00)
            c1 = c01 + ty * (c11 - c01)
            v = c0 + tz * (c1 - c0)
            if v < best:
                best = v
        out[p] = best
    return out


def batch_clearance(grid, points: np.ndarray, rots: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Clearance of ``points`` under each pose ``(rots[i], trans[i])`` against ``grid``.

    Poses that put any point outside the grid's query domain get ``-inf``.
    """
    dom = grid.query_domain()
    slack = 1e-9
    return _batch_clearance(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(rots, dtype=np.float64),
        np.ascontiguousarray(trans, dtype=np.float64),
        grid.values,
        np.ascontiguousarray(grid.origin),
        float(grid.resolution),
        dom.lo - slack,
        dom.hi + slack,
    )


def set_threads(n: int | None) -> None:
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
