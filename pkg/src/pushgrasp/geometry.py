"""Planar convex geometry shared by the world model and the simulator.

Footprints are defined in a local object frame and placed into the
workspace by a planar pose (x, y, yaw). All contact queries operate on
placed (world-frame) shapes. Everything here is deterministic pure math.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Disk:
    """Circular footprint, local frame centered at the origin."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex footprint with counter-clockwise vertices in the local frame."""

    vertices: tuple  # ((x, y), ...) CCW

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ValueError("polygon needs at least 3 planar vertices")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross < -1e-12):
            raise ValueError("polygon vertices must be convex and counter-clockwise")
        if polygon_area(v) <= 0:
            raise ValueError("polygon area must be positive")


def polygon_area(verts) -> float:
    v = np.asarray(verts, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def rectangle(width: float, height: float) -> ConvexPolygon:
    hw, hh = width / 2.0, height / 2.0
    return ConvexPolygon(((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)))


def regular_polygon(sides: int, circumradius: float) -> ConvexPolygon:
    ang = 2 * math.pi / sides
    return ConvexPolygon(tuple(
        (circumradius * math.cos(i * ang), circumradius * math.sin(i * ang))
        for i in range(sides)
    ))


def rot2d(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# Placed (world-frame) shapes

@dataclass
class WorldDisk:
    center: np.ndarray  # (2,)
    radius: float


@dataclass
class WorldPoly:
    verts: np.ndarray  # (n, 2) CCW


def place(footprint, pose) -> WorldDisk | WorldPoly:
    """Resolve a local footprint into the world frame via pose (x, y, yaw)."""
    x, y, yaw = pose
    if isinstance(footprint, Disk):
        return WorldDisk(np.array([x, y], dtype=float), footprint.radius)
    v = np.asarray(footprint.vertices, dtype=float)
    return WorldPoly(v @ rot2d(yaw).T + np.array([x, y]))


def centroid(shape) -> np.ndarray:
    if isinstance(shape, WorldDisk):
        return shape.center.copy()
    v = shape.verts
    x, y = v[:, 0], v[:, 1]
    cr = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * np.sum(cr)
    cx = np.sum((x + np.roll(x, -1)) * cr) / (6 * a)
    cy = np.sum((y + np.roll(y, -1)) * cr) / (6 * a)
    return np.array([cx, cy])


def circumradius(shape) -> float:
    """Max distance from the centroid to the boundary."""
    if isinstance(shape, WorldDisk):
        return shape.radius
    c = centroid(shape)
    return float(np.max(np.linalg.norm(shape.verts - c, axis=1)))


def translated(shape, delta) -> WorldDisk | WorldPoly:
    d = np.asarray(delta, dtype=float)
    if isinstance(shape, WorldDisk):
        return WorldDisk(shape.center + d, shape.radius)
    return WorldPoly(shape.verts + d)


def scaled_about_centroid(shape, factor: float) -> WorldDisk | WorldPoly:
    if isinstance(shape, WorldDisk):
        return WorldDisk(shape.center.copy(), shape.radius * factor)
    c = centroid(shape)
    return WorldPoly(c + factor * (shape.verts - c))


def point_inside(shape, p) -> bool:
    p = np.asarray(p, dtype=float)
    if isinstance(shape, WorldDisk):
        return bool(np.sum((p - shape.center) ** 2) <= shape.radius ** 2)
    v = shape.verts
    e = np.roll(v, -1, axis=0) - v
    rel = p - v
    return bool(np.all(e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0] >= -1e-12))


def _project(shape, axis) -> tuple[float, float]:
    if isinstance(shape, WorldDisk):
        c = float(shape.center @ axis)
        return c - shape.radius, c + shape.radius
    d = shape.verts @ axis
    return float(d.min()), float(d.max())


def _sat_axes(a, b) -> list[np.ndarray]:
    axes = []
    for shape, other in ((a, b), (b, a)):
        if isinstance(shape, WorldPoly):
            e = np.roll(shape.verts, -1, axis=0) - shape.verts
            n = np.stack([e[:, 1], -e[:, 0]], axis=1)
            ln = np.linalg.norm(n, axis=1)
            axes.extend(n[i] / ln[i] for i in range(len(n)) if ln[i] > 1e-12)
        else:
            # disk: axis toward the other shape's nearest feature
            if isinstance(other, WorldDisk):
                d = other.center - shape.center
                ln = np.linalg.norm(d)
                axes.append(d / ln if ln > 1e-12 else np.array([1.0, 0.0]))
            else:
                d = other.verts - shape.center
                ln = np.linalg.norm(d, axis=1)
                axes.extend(d[i] / ln[i] for i in range(len(d)) if ln[i] > 1e-12)
    return axes


def mtv(a, b) -> np.ndarray | None:
    """Minimum translation vector separating b from a, or None if disjoint.

    Translating b by the returned vector brings the pair to (just) touching.
    """
    best_overlap = math.inf
    best_axis = None
    for axis in _sat_axes(a, b):
        lo_a, hi_a = _project(a, axis)
        lo_b, hi_b = _project(b, axis)
        overlap = min(hi_a, hi_b) - max(lo_a, lo_b)
        if overlap <= 0:
            return None
        if overlap < best_overlap:
            best_overlap = overlap
            best_axis = axis
    if best_axis is None:
        return None
    sign = 1.0 if (centroid(b) - centroid(a)) @ best_axis >= 0 else -1.0
    return sign * best_overlap * best_axis


def penetration_depth(a, b) -> float:
    v = mtv(a, b)
    return 0.0 if v is None else float(np.linalg.norm(v))


def line_chord(shape, point, direction) -> tuple[float, float] | None:
    """Parameter interval [s0, s1] where point + s*direction lies in shape."""
    p = np.asarray(point, dtype=float)
    d = np.asarray(direction, dtype=float)
    if isinstance(shape, WorldDisk):
        rel = p - shape.center
        a = d @ d
        bq = 2 * rel @ d
        c = rel @ rel - shape.radius ** 2
        disc = bq * bq - 4 * a * c
        if disc <= 0 or a <= 0:
            return None
        sq = math.sqrt(disc)
        return (-bq - sq) / (2 * a), (-bq + sq) / (2 * a)
    lo, hi = -math.inf, math.inf
    v = shape.verts
    e = np.roll(v, -1, axis=0) - v
    for i in range(len(v)):
        # inside: cross(e_i, x - v_i) >= 0; linear in s
        c0 = e[i, 0] * (p[1] - v[i, 1]) - e[i, 1] * (p[0] - v[i, 0])
        c1 = e[i, 0] * d[1] - e[i, 1] * d[0]
        if abs(c1) < 1e-15:
            if c0 < 0:
                return None
        elif c1 > 0:
            lo = max(lo, -c0 / c1)
        else:
            hi = min(hi, -c0 / c1)
    if lo >= hi:
        return None
    return lo, hi


def segment_hits(shape, p0, p1) -> bool:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    span = line_chord(shape, p0, d)
    if span is None:
        return False
    s0, s1 = span
    return max(s0, 0.0) < min(s1, 1.0)


def convex_hull(points) -> np.ndarray:
    """Andrew monotone chain; returns CCW hull vertices."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    if len(pts) <= 2:
        return np.asarray(pts, dtype=float)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=float)
