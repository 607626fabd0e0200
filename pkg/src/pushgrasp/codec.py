"""Angle-view orientation codec and the frozen analytic heatmap source.

Gripper orientation is factored into an approach view (one of V unit
vectors pointing down into the workspace) and an in-plane rotation of the
closing axis about it (A bins over [0, pi)). The flat class index is
view-major: value = view * A + angle. The analytic surrogate scores every
orientation class on a 56x56 grid from surface alignment and finger-line
clearance; it is deterministic and never trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import Observation, Workspace

VIEW_COUNT = 60
ANGLE_COUNT = 6
ELEVATION_FLOOR_DEG = 15.0
POLE_GAP_DEG = 14.0          # spiral starts this far from the straight-down pole
CELL_STRIDE = 4              # 224 -> 56 feature grid
FREE_DEPTH = 0.005           # below this a cell counts as bare table
FINGER_HALF_SPAN = 0.070     # half of the 0.140 m max opening


@dataclass(frozen=True)
class OrientationSet:
    views: np.ndarray       # (V, 3) unit vectors, z < 0
    angles: np.ndarray      # (A,) radians in [0, pi)

    @property
    def view_count(self) -> int:
        return len(self.views)

    @property
    def angle_count(self) -> int:
        return len(self.angles)

    @property
    def size(self) -> int:
        return self.view_count * self.angle_count


@dataclass(frozen=True)
class GripperOrientation:
    approach: np.ndarray    # unit 3-vector, pointing down
    in_plane: float         # radians
    rotation: np.ndarray    # 3x3, columns (closing, transverse, approach)


def sample_views(count: int) -> np.ndarray:
    """Deterministic Fibonacci-spiral views over the upper hemisphere.

    Element 0 is pinned to the straight-down pole; the spiral covers
    elevations from POLE_GAP_DEG below the pole down to the 15 degree
    floor. All vectors are negated to point into the workspace.
    """
    if count < 1:
        raise ValueError("need at least one view")
    if count == 1:
        return np.array([[0.0, 0.0, -1.0]])
    z_floor = math.sin(math.radians(ELEVATION_FLOOR_DEG))
    z_top = math.cos(math.radians(POLE_GAP_DEG))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    n = count - 1
    pts = [np.array([0.0, 0.0, 1.0])]
    for i in range(1, count):
        z = z_top - (z_top - z_floor) * ((i - 1) / max(1, n - 1))
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        phi = i * golden
        pts.append(np.array([rho * math.cos(phi), rho * math.sin(phi), z]))
    return -np.stack(pts)


def default_orientation_set(view_count: int = VIEW_COUNT,
                            angle_count: int = ANGLE_COUNT) -> OrientationSet:
    angles = np.arange(angle_count) * (math.pi / angle_count)
    return OrientationSet(views=sample_views(view_count), angles=angles)


def encode(view: int, angle: int, oset: OrientationSet) -> int:
    if not (0 <= view < oset.view_count and 0 <= angle < oset.angle_count):
        raise ValueError(f"orientation indices out of range: view={view} angle={angle}")
    return view * oset.angle_count + angle


def decode(value: int, oset: OrientationSet) -> tuple[int, int]:
    if not (0 <= value < oset.size):
        raise ValueError(f"orientation class {value} out of range [0, {oset.size})")
    return divmod(value, oset.angle_count)


def _rodrigues(axis: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    k = axis
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return c * np.eye(3) + s * kx + (1 - c) * np.outer(k, k)


def orientation_to_rotation(value: int, oset: OrientationSet) -> GripperOrientation:
    """Build the gripper rotation for one orientation class.

    Zero in-plane angle aligns the closing axis with world x (projected
    perpendicular to the approach); the in-plane angle rotates it about
    the approach direction.
    """
    view, angle = decode(value, oset)
    approach = oset.views[view]
    theta = float(oset.angles[angle])
    x = np.array([1.0, 0.0, 0.0])
    c0 = x - (x @ approach) * approach
    c0 /= np.linalg.norm(c0)
    closing = _rodrigues(approach, theta) @ c0
    transverse = np.cross(approach, closing)
    rotation = np.stack([closing, transverse, approach], axis=1)
    return GripperOrientation(approach=approach.copy(), in_plane=theta, rotation=rotation)


def tilt_from_vertical(approach: np.ndarray) -> float:
    """Angle in radians between a downward approach and straight down."""
    return math.acos(min(1.0, max(-1.0, -float(approach[2]))))


def _clearance_offsets(oset: OrientationSet, pitch: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel offsets along each closing axis, shape (A, 2K+1)."""
    k_max = int(math.floor(FINGER_HALF_SPAN / pitch))
    ks = np.arange(-k_max, k_max + 1)
    dr = np.rint(np.outer(np.sin(oset.angles), ks)).astype(int)
    dc = np.rint(np.outer(np.cos(oset.angles), ks)).astype(int)
    return dr, dc


def surrogate_avh(obs: Observation, oset: OrientationSet,
                  ws: Workspace | None = None) -> np.ndarray:
    """Frozen analytic stand-in for the pretrained orientation backbone.

    Per 4x4 cell and orientation class: score = alignment * clearance.
    Alignment is the (clamped) dot of the approach with the local surface
    normal from central-difference depth gradients; clearance is the free
    fraction along the closing-axis finger lines.
    """
    ws = ws or Workspace()
    depth = np.asarray(obs.depth, dtype=np.float64)
    g = ws.grid_size
    gc = g // CELL_STRIDE
    pitch = ws.pixel_pitch
    idx = CELL_STRIDE * np.arange(gc) + CELL_STRIDE // 2  # sample row/col per cell

    ip = np.clip(idx[:, None] + 1, 0, g - 1)
    im = np.clip(idx[:, None] - 1, 0, g - 1)
    dzdy = (depth[ip[:, 0]][:, idx] - depth[im[:, 0]][:, idx]) / (2 * pitch)
    dzdx = (depth[idx][:, ip[:, 0]] - depth[idx][:, im[:, 0]]) / (2 * pitch)
    normals = np.stack([-dzdx, -dzdy, np.ones_like(dzdx)])
    normals /= np.linalg.norm(normals, axis=0, keepdims=True)

    # alignment per view: (V, gc, gc)
    align = np.maximum(0.0, -np.einsum("vk,kij->vij", oset.views, normals))

    # clearance per in-plane angle: (A, gc, gc)
    free = depth < FREE_DEPTH
    dr, dc = _clearance_offsets(oset, pitch)
    rows = idx[None, None, :, None] + dr[:, :, None, None]   # (A, S, gc, 1)
    cols = idx[None, None, None, :] + dc[:, :, None, None]   # (A, S, 1, gc)
    rows, cols = np.broadcast_arrays(rows, cols)
    valid = (rows >= 0) & (rows < g) & (cols >= 0) & (cols < g)
    # samples beyond the grid are bare table, hence free
    sampled = np.ones(rows.shape, dtype=bool)
    sampled[valid] = free[rows[valid], cols[valid]]
    clearance = sampled.mean(axis=1)

    scores = align[:, None, :, :] * clearance[None, :, :, :]
    scores = scores.reshape(oset.size, gc, gc)
    return np.clip(scores, 0.0, 1.0).astype(np.float32)
