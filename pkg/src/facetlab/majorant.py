"""Least concave majorant of a path and the facet / roughness observables.

Extreme points come from an integer monotone-chain scan, so collinear points
are classified exactly.  Distances are ordinary floats.

Axis-degenerate paths (every step on one axis) have a hull that is a single
segment on the axis.  Such a majorant has no facets and every vertex lies on
it, so all roughness values are 0 and ``mean_facet`` raises.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numba
import numpy as np

from .errors import RayMissesMajorant
from .path_core import Bridge, LatticePath, Point


@numba.njit(cache=True)
def _upper_hull(steps, start_height):
    n = steps.shape[0]
    hx = np.empty(n + 2, dtype=np.int64)
    hy = np.empty(n + 2, dtype=np.int64)
    h = 0
    x = 0
    y = start_height
    # candidate points: the top vertex of every column, then (x_end, 0)
    for i in range(-1, n + 1):
        if i == -1:
            px, py = 0, start_height
        elif i < n:
            if steps[i] == 1:
                x += 1
                px, py = x, y
            else:
                y -= 1
                continue
        else:
            if h > 0 and hy[h - 1] == 0:
                break
            px, py = x, 0
        while h >= 2:
            cross = (hx[h - 1] - hx[h - 2]) * (py - hy[h - 2]) - (hy[h - 1] - hy[h - 2]) * (px - hx[h - 2])
            if cross >= 0:
                h -= 1
            else:
                break
        hx[h] = px
        hy[h] = py
        h += 1
    return hx[:h].copy(), hy[:h].copy()


@numba.njit(cache=True)
def upper_chain(xs, ys):
    """Indices of the upper hull of a polyline whose x-coordinates never decrease."""
    n = xs.shape[0]
    idx = np.empty(n, dtype=np.int64)
    h = 0
    for i in range(n):
        while h >= 2:
            a = idx[h - 2]
            b = idx[h - 1]
            cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a])
            if cross >= 0:
                h -= 1
            else:
                break
        idx[h] = i
        h += 1
    return idx[:h].copy()


def upper_hull_points(start_height: int, steps: np.ndarray) -> np.ndarray:
    """Nonzero extreme points of conv(path vertices + origin), shape (h, 2), clockwise from the y-axis."""
    if steps.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    hx, hy = _upper_hull(np.ascontiguousarray(steps, dtype=np.uint8), np.int64(start_height))
    pts = np.stack([hx, hy], axis=1)
    if start_height == 0:
        # the path runs along the x-axis: the hull is the segment [0, (x_end, 0)]
        pts = pts[-1:]
    elif steps.sum() == 0:
        pts = pts[:1]
    return pts


@numba.njit(cache=True)
def _segment_distance(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    norm2 = dx * dx + dy * dy
    if norm2 == 0.0:
        return math.sqrt((px - ax) ** 2 + (py - ay) ** 2)
    t = ((px - ax) * dx + (py - ay) * dy) / norm2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    ex = ax + t * dx - px
    ey = ay + t * dy - py
    return math.sqrt(ex * ex + ey * ey)


@numba.njit(cache=True)
def distances_to_polyline(xs, ys, hx, hy):
    """Distance from each point to the polyline through (hx, hy), and the nearest segment."""
    return _roughness_profile(xs, ys, hx, hy)


@numba.njit(cache=True)
def _roughness_profile(xs, ys, hx, hy):
    n = xs.shape[0]
    f = hx.shape[0] - 1
    dist = np.zeros(n, dtype=np.float64)
    nearest = np.full(n, -1, dtype=np.int64)
    if f < 1:
        return dist, nearest
    for v in range(n):
        best = np.inf
        arg = 0
        for i in range(f):
            d = _segment_distance(float(xs[v]), float(ys[v]), float(hx[i]), float(hy[i]),
                                  float(hx[i + 1]), float(hy[i + 1]))
            if d < best:
                best = d
                arg = i
        dist[v] = best
        nearest[v] = arg
    return dist, nearest


@dataclass(frozen=True)
class Facet:
    a: Point
    b: Point

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])


class ConcaveMajorant:
    """Ordered extreme points of conv(path + origin), minus the origin."""

    def __init__(self, ext_points: np.ndarray):
        self.ext_points = np.asarray(ext_points, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.ext_points)

    def points(self) -> List[Point]:
        return [(int(x), int(y)) for x, y in self.ext_points]

    @cached_property
    def facets(self) -> List[Facet]:
        pts = self.points()
        return [Facet(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        d = np.diff(self.ext_points.astype(np.float64), axis=0)
        return np.hypot(d[:, 0], d[:, 1])

    def facet_index_at_angle(self, angle: float) -> int:
        """Index of the facet crossed by the ray at ``angle``; the leftmost one if the ray hits a corner."""
        if len(self.ext_points) < 2:
            raise RayMissesMajorant("majorant has no facet")
        if abs(angle - math.pi / 4) < 1e-15:
            # exact integer test on the diagonal
            side = self.ext_points[:, 1] - self.ext_points[:, 0]
        else:
            side = self.ext_points[:, 1] * math.cos(angle) - self.ext_points[:, 0] * math.sin(angle)
        if side[0] < 0 or side[-1] > 0:
            raise RayMissesMajorant(f"ray at angle {angle} misses the majorant")
        return int(np.argmax(side[1:] <= 0))

    def point_at_angle(self, angle: float) -> Tuple[float, float]:
        """Intersection of the ray at ``angle`` with the majorant curve."""
        i = self.facet_index_at_angle(angle)
        (ax, ay), (bx, by) = self.ext_points[i], self.ext_points[i + 1]
        c, s = math.cos(angle), math.sin(angle)
        # solve a + t (b - a) on the line s*x - c*y = 0
        fa = s * ax - c * ay
        fb = s * bx - c * by
        t = fa / (fa - fb) if fa != fb else 0.0
        return ax + t * (bx - ax), ay + t * (by - ay)

    def tangent_at_angle(self, angle: float) -> Tuple[float, float]:
        """Unit tangent of the facet crossed at ``angle``, oriented counterclockwise."""
        i = self.facet_index_at_angle(angle)
        (ax, ay), (bx, by) = self.ext_points[i], self.ext_points[i + 1]
        dx, dy = float(ax - bx), float(ay - by)
        norm = math.hypot(dx, dy)
        return dx / norm, dy / norm


def least_concave_majorant(path: LatticePath) -> ConcaveMajorant:
    return ConcaveMajorant(upper_hull_points(path.start_height, path.steps))


def roughness_profile(path: LatticePath, majorant: Optional[ConcaveMajorant] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Distance of every vertex to the majorant and the index of the nearest facet (-1 if none)."""
    if majorant is None:
        majorant = least_concave_majorant(path)
    xs, ys = path.vertices
    ext = majorant.ext_points
    return _roughness_profile(xs, ys, np.ascontiguousarray(ext[:, 0]), np.ascontiguousarray(ext[:, 1]))


def local_roughness(path: LatticePath, v: Point) -> float:
    i = path.index_of(v)
    maj = least_concave_majorant(path)
    xs, ys = path.vertices
    ext = maj.ext_points
    dist, _ = _roughness_profile(xs[i:i + 1], ys[i:i + 1], np.ascontiguousarray(ext[:, 0]),
                                 np.ascontiguousarray(ext[:, 1]))
    return float(dist[0])


def mean_facet(path: LatticePath, slope_alpha: float = 1.0) -> Facet:
    if not slope_alpha > 0:
        raise ValueError("slope must be positive")
    maj = least_concave_majorant(path)
    i = maj.facet_index_at_angle(math.atan(slope_alpha))
    return maj.facets[i]


def mean_fl(path: LatticePath) -> float:
    return mean_facet(path, 1.0).length


def middle_vertex_index(path: LatticePath) -> int:
    """Index of the vertex on the diagonal: x - y = i - k, so it is vertex k."""
    return path.start_height


def mean_lr(path: LatticePath) -> float:
    return local_roughness(path, path.vertex(middle_vertex_index(path)))


def max_fl(path: LatticePath) -> float:
    lengths = least_concave_majorant(path).facet_lengths
    return float(lengths.max()) if lengths.size else 0.0


def max_lr(path: LatticePath) -> float:
    dist, _ = roughness_profile(path)
    return float(dist.max()) if dist.size else 0.0


def mlrf(path: LatticePath) -> float:
    """Length of the facet nearest to the first vertex that attains the maximal roughness."""
    maj = least_concave_majorant(path)
    dist, nearest = roughness_profile(path, maj)
    if not len(maj.facets):
        return 0.0
    v = int(np.argmax(dist))
    return float(maj.facet_lengths[nearest[v]])


def facet_statistics(path: LatticePath) -> Dict[str, float]:
    """MeanFL, MeanLR, MaxFL, MaxLR and MLRF computed from one majorant pass."""
    maj = least_concave_majorant(path)
    dist, nearest = roughness_profile(path, maj)
    lengths = maj.facet_lengths
    if lengths.size == 0:
        return dict(mean_fl=0.0, mean_lr=0.0, max_fl=0.0, max_lr=0.0, mlrf=0.0)
    v = int(np.argmax(dist))
    return dict(
        mean_fl=float(lengths[maj.facet_index_at_angle(math.pi / 4)]),
        mean_lr=float(dist[middle_vertex_index(path)]),
        max_fl=float(lengths.max()),
        max_lr=float(dist[v]),
        mlrf=float(lengths[nearest[v]]),
    )


def extend_bridge(bridge: Bridge) -> LatticePath:
    """Close a bridge into a full path: horizontal steps from the y-axis, vertical steps to the x-axis."""
    (ax, ay), (_, by) = bridge.a, bridge.b
    steps = np.r_[np.ones(ax, np.uint8), bridge.steps, np.zeros(by, np.uint8)]
    return LatticePath(ay, steps)


def bridge_roughness(bridge: Bridge) -> Tuple[np.ndarray, ConcaveMajorant]:
    """Roughness of each bridge vertex with respect to the majorant of the extended bridge."""
    full = extend_bridge(bridge)
    maj = least_concave_majorant(full)
    dist, _ = roughness_profile(full, maj)
    first = bridge.a[0]
    return dist[first:first + len(bridge) + 1], maj
