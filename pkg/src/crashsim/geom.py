"""Planar geometry helpers: polylines and oriented rectangles.

World frame: x east, y north, meters. Headings are radians in the math
convention (0 along +x, counterclockwise positive).
"""

from __future__ import annotations

import math

import numpy as np


def polyline_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex; shape (N,), starts at 0."""
    deltas = np.diff(points, axis=0)
    seg = np.hypot(deltas[:, 0], deltas[:, 1])
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at_arclength(points: np.ndarray, lengths: np.ndarray,
                       s: float) -> tuple[np.ndarray, float]:
    """Position and heading on a polyline at arc length ``s`` (clamped)."""
    total = lengths[-1]
    s = min(max(s, 0.0), total)
    i = int(np.searchsorted(lengths, s, side="right")) - 1
    i = min(max(i, 0), len(points) - 2)
    seg_len = lengths[i + 1] - lengths[i]
    t = 0.0 if seg_len == 0 else (s - lengths[i]) / seg_len
    pos = points[i] + t * (points[i + 1] - points[i])
    d = points[i + 1] - points[i]
    return pos, math.atan2(d[1], d[0])


def project_to_polyline(points: np.ndarray, lengths: np.ndarray,
                        p: np.ndarray) -> tuple[float, float]:
    """(arc length, lateral distance) of the closest point on the polyline."""
    a = points[:-1]
    d = points[1:] - a
    seg2 = np.einsum("ij,ij->i", d, d)
    seg2_safe = np.where(seg2 == 0, 1.0, seg2)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, d) / seg2_safe, 0.0, 1.0)
    closest = a + t[:, None] * d
    d2 = np.einsum("ij,ij->i", closest - p[None, :], closest - p[None, :])
    i = int(np.argmin(d2))
    s = lengths[i] + t[i] * math.sqrt(seg2[i])
    return float(s), float(math.sqrt(d2[i]))


def obb_corners(cx: float, cy: float, heading: float,
                length: float, width: float) -> np.ndarray:
    """Corner coordinates of an oriented rectangle, shape (4, 2), CCW order."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([(cx + lx * c - ly * s, cy + lx * s + ly * c) for lx, ly in local])


def obb_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis overlap test between two rectangles given as corners.

    Exact for rectangles: only the two edge normals of each box need testing.
    Touching boxes count as overlapping.
    """
    for corners in (a, b):
        for i in (0, 1):
            edge = corners[i + 1] - corners[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


