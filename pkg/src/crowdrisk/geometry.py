"""Planar helpers: polylines, ego-frame transforms, point-in-rectangle."""

from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np


def wrap_degrees(angle: float) -> float:
    """Angle in [0, 360); ``-1e-20 % 360`` alone rounds to 360.0."""
    a = angle % 360.0
    return 0.0 if a >= 360.0 else a


def to_ego_frame(points, origin, heading_deg):
    """World points -> (forward, left) offsets relative to a pose.

    Heading is measured counter-clockwise from the world +x axis.
    """
    th = math.radians(heading_deg)
    c, s = math.cos(th), math.sin(th)
    d = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    fwd = d[..., 0] * c + d[..., 1] * s
    left = -d[..., 0] * s + d[..., 1] * c
    return fwd, left


def points_in_rectangle(points, center, heading_deg, length, width):
    """Boolean mask of points inside (or on) an oriented rectangle."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    fwd, left = to_ego_frame(pts, center, heading_deg)
    return (np.abs(fwd) <= length / 2.0) & (np.abs(left) <= width / 2.0)


class Polyline:
    """A piecewise-linear path parameterised by arc length."""

    def __init__(self, waypoints):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a path needs at least 2 two-dimensional waypoints")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0):
            raise ValueError("path has repeated consecutive waypoints")
        self.waypoints = pts
        self.lengths = lengths
        self.cumulative = [0.0] + [float(c) for c in np.cumsum(lengths)]
        self.length = self.cumulative[-1]
        self.headings = [wrap_degrees(math.degrees(math.atan2(d[1], d[0]))) for d in seg]
        # plain floats keep per-tick lookups off numpy scalars
        self._pts = pts.tolist()
        self._seg_lengths = lengths.tolist()

    def __len__(self):
        return len(self.waypoints)

    def segment_at(self, distance: float) -> int:
        """Index of the segment containing ``distance`` (vertices belong to the next one)."""
        if distance >= self.length:
            return len(self.lengths) - 1
        return max(0, bisect_right(self.cumulative, distance) - 1)

    def locate(self, distance: float):
        """``(x, y, heading_deg, segment)`` at an arc-length position."""
        distance = min(max(distance, 0.0), self.length)
        k = self.segment_at(distance)
        t = (distance - self.cumulative[k]) / self._seg_lengths[k]
        a, b = self._pts[k], self._pts[k + 1]
        x = a[0] + t * (b[0] - a[0])
        y = a[1] + t * (b[1] - a[1])
        return x, y, self.headings[k], k

    def distance_to(self, point) -> float:
        """Euclidean distance from ``point`` to the nearest point of the polyline."""
        p = np.asarray(point, dtype=float)
        a = self.waypoints[:-1]
        d = self.waypoints[1:] - a
        t = np.clip(np.einsum("ij,ij->i", p - a, d) / (self.lengths**2), 0.0, 1.0)
        proj = a + t[:, None] * d
        return float(np.min(np.hypot(*(proj - p).T)))
