"""Winding and linking numbers of closed polylines.

Both are integers computed from real-valued sums; each function reports
or enforces how far from an integer the raw sum landed, refining the
discretization until the residual is small.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .vectors import orthonormal_frame


class TopologyError(ValueError):
    """Curves too close, too coarse, or intersecting a required axis."""


def _closed(pts) -> np.ndarray:
    p = np.asarray(pts, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 3:
        raise ValueError("need an (n>=3, 3) vertex array")
    if not np.allclose(p[0], p[-1]):
        p = np.vstack([p, p[0]])
    return p


def winding_number(loop, axis_point, axis_dir, *, axis_clearance=1e-9) -> int:
    """Signed number of turns of a closed polyline around an axis.

    The total accumulated azimuthal angle around the axis divided by
    2*pi. Segments subtending more than pi/2 are subdivided (straight
    chords, so geometry is unchanged) until every increment is
    unambiguous. Errors if the loop comes within ``axis_clearance`` of
    the axis (relative to the loop's own scale).
    """
    p = _closed(loop)
    axis_point = np.asarray(axis_point, dtype=float)
    e1, e2, n = orthonormal_frame(axis_dir)
    scale = float(np.max(np.linalg.norm(p - axis_point, axis=1)))

    for _ in range(40):
        d = p - axis_point
        x = d @ e1
        y = d @ e2
        rho = np.hypot(x, y)
        if rho.min() < axis_clearance * scale:
            raise TopologyError("loop passes through (or too near) the axis")
        theta = np.arctan2(y, x)
        dth = np.diff(theta)
        dth = (dth + math.pi) % (2.0 * math.pi) - math.pi
        wide = np.abs(dth) > 0.5 * math.pi
        if not wide.any():
            total = dth.sum() / (2.0 * math.pi)
            return int(round(total))
        idx = np.flatnonzero(wide)
        mids = 0.5 * (p[idx] + p[idx + 1])
        p = np.insert(p, idx + 1, mids, axis=0)
    raise TopologyError("winding number did not stabilize under refinement")


def _min_curve_separation(p1, p2) -> float:
    d = p1[:, None, :] - p2[None, :, :]
    return float(np.sqrt((d**2).sum(axis=2)).min())


def _subdivide(p) -> np.ndarray:
    mids = 0.5 * (p[:-1] + p[1:])
    out = np.empty((2 * len(p) - 1, 3))
    out[0::2] = p
    out[1::2] = mids
    return out


def linking_number(c1, c2, *, residual_tol=0.1, min_separation=1e-9,
                   max_refinements=8, return_residual=False):
    """Gauss linking number of two disjoint closed polylines.

    Evaluates the double sum over segment-midpoint pairs and rounds to
    the nearest integer; when the rounding residual exceeds
    ``residual_tol`` the coarser curve is subdivided (chord midpoints, so
    the polygons themselves are unchanged) and the sum is repeated.
    """
    p1 = _closed(c1)
    p2 = _closed(c2)
    scale = max(
        float(np.linalg.norm(p1.max(axis=0) - p1.min(axis=0))),
        float(np.linalg.norm(p2.max(axis=0) - p2.min(axis=0))),
    )
    if _min_curve_separation(p1, p2) < min_separation * scale:
        raise TopologyError("curves touch (or nearly touch); linking undefined")

    raw = 0.0
    for _ in range(max_refinements + 1):
        raw = kernels.gauss_linking_sum(
            np.ascontiguousarray(p1), np.ascontiguousarray(p2)
        )
        residual = abs(raw - round(raw))
        if residual <= residual_tol:
            link = int(round(raw))
            return (link, residual) if return_residual else link
        seg1 = np.linalg.norm(np.diff(p1, axis=0), axis=1).max()
        seg2 = np.linalg.norm(np.diff(p2, axis=0), axis=1).max()
        if seg1 >= seg2:
            p1 = _subdivide(p1)
        else:
            p2 = _subdivide(p2)
    raise TopologyError(
        f"linking sum stayed {abs(raw - round(raw)):.3f} from an integer after "
        f"{max_refinements} refinements (curves too close or too coarse)"
    )
