"""Decoders: feature map + orientation scores -> executable motion.

The sampled feature-grid pixel picks the branch: inside the visible target
mask it becomes a 6-DoF grasp; inside the expanded ring it becomes a push
whose keypoints are extracted from the feature map within a contour-radius
mask, chained into one or two arm paths, and smoothed with a
Savitzky-Golay filter. Anything unexecutable decodes to Invalid rather
than reaching the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .agent import ActionSample
from .codec import OrientationSet, orientation_to_rotation, tilt_from_vertical
from .sim import (GraspPose, PushPath, TIP_RADIUS, PATH_Z_MAX, PATH_Z_MIN,
                  LEFT, RIGHT, check_reachable)
from .world import (Observation, Scene, Workspace, pixel_to_world,
                    rasterize_shape, target_footprint_mask)

EXPAND_SCALE = 1.5
PUSH_MASK_SCALE = 1.5
KEYPOINT_LIMIT = 8
NMS_RADIUS_CELLS = 3
START_OFFSET = 0.04
START_SHIFT = 0.01
START_SHIFT_LIMIT = 10
PATH_Z = 0.01
RESAMPLE_SPACING = 0.02
SAVGOL_WINDOW = 7
SAVGOL_ORDER = 3
REFINE_ROUNDS = 3

OUT_OF_WORKSPACE = "OutOfWorkspace"
UNREACHABLE = "Unreachable"
BAD_HEIGHT = "BadHeight"
BLOCKED_START = "BlockedStart"


class EmptyMaskError(ValueError):
    pass


class NoFeasibleStartError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPair:
    target_mask_56: np.ndarray    # visible target cells, feature grid
    expanded_mask_56: np.ndarray  # 1.5x footprint cells, feature grid


@dataclass(frozen=True)
class DecodedMotion:
    kind: str                     # "grasp" | "push" | "invalid"
    grasp: GraspPose | None = None
    paths: tuple = ()
    reason: str = ""


def pool_any(mask: np.ndarray, stride: int = 4) -> np.ndarray:
    g = mask.shape[0] // stride
    return mask.reshape(g, stride, g, stride).any(axis=(1, 3))


def make_masks(scene: Scene, obs: Observation) -> MaskPair:
    """Visible-target and expanded-footprint masks on the feature grid."""
    ws = scene.workspace
    t56 = pool_any(obs.target_mask)
    target = scene.target
    if target is None:
        raise ValueError("scene has no target object")
    shape = geo.scaled_about_centroid(target.shape(), EXPAND_SCALE)
    e56 = pool_any(rasterize_shape(shape, ws))
    if not e56.any():
        # degenerate raster (target hugging the wall); fall back to its centroid cell
        c = geo.centroid(target.shape())
        col = int(np.clip(c[0] / ws.pixel_pitch, 0, ws.grid_size - 1)) // 4
        row = int(np.clip(c[1] / ws.pixel_pitch, 0, ws.grid_size - 1)) // 4
        e56 = np.zeros_like(t56)
        e56[row, col] = True
        e56 |= t56
    return MaskPair(target_mask_56=t56, expanded_mask_56=e56)


def score_actions(fmap: np.ndarray, masks: MaskPair):
    """Grasp/push arbitration: the branch with the larger masked peak wins."""
    tm = masks.target_mask_56
    ring = masks.expanded_mask_56 & ~tm
    grasp_score = float(fmap[tm].max()) if tm.any() else -math.inf
    push_score = float(fmap[ring].max()) if ring.any() else -math.inf
    chosen = "grasp" if grasp_score >= push_score else "push"
    return grasp_score, push_score, chosen


def decode_grasp(pixel: tuple, depth: np.ndarray, target_mask: np.ndarray,
                 orientation_scores: np.ndarray, oset: OrientationSet,
                 ws: Workspace, tilt_cap: float = math.radians(45.0)) -> GraspPose:
    """Grasp point = deepest visible target cell under the chosen pixel."""
    r, c = pixel
    s = 4
    block_d = depth[s * r:s * r + s, s * c:s * c + s]
    block_m = target_mask[s * r:s * r + s, s * c:s * c + s]
    if not block_m.any():
        raise ValueError("grasp pixel has no visible target cell beneath it")
    flat = np.where(block_m, block_d, -1.0).reshape(-1)
    best = int(np.argmax(flat))
    row, col = s * r + best // s, s * c + best % s
    x, y = pixel_to_world(row, col, ws)
    z = max(float(depth[row, col]) - 0.005, 0.005)

    order = np.argsort(-np.asarray(orientation_scores, dtype=np.float64), kind="stable")
    for idx in order:
        orientation = orientation_to_rotation(int(idx), oset)
        if tilt_from_vertical(orientation.approach) <= tilt_cap + 1e-9:
            return GraspPose(translation=np.array([x, y, z]), orientation=orientation)
    raise ValueError("no orientation satisfies the tilt cap")  # view 0 always does


def contour_radius(footprint_mask: np.ndarray, ws: Workspace):
    """Largest centroid-to-boundary distance and the derived push mask."""
    cells = np.argwhere(footprint_mask)
    if len(cells) == 0:
        return 0.0, np.zeros_like(footprint_mask)
    pitch = ws.pixel_pitch
    centers = (cells[:, ::-1] + 0.5) * pitch  # (x, y) per cell
    centroid = centers.mean(axis=0)
    interior = np.zeros_like(footprint_mask)
    interior[1:-1, 1:-1] = (footprint_mask[2:, 1:-1] & footprint_mask[:-2, 1:-1]
                            & footprint_mask[1:-1, 2:] & footprint_mask[1:-1, :-2])
    boundary = footprint_mask & ~interior
    bc = (np.argwhere(boundary)[:, ::-1] + 0.5) * pitch
    radius = float(np.max(np.linalg.norm(bc - centroid, axis=1)))
    disk = geo.WorldDisk(centroid, PUSH_MASK_SCALE * radius)
    push_mask = rasterize_shape(disk, ws) & ~footprint_mask
    return radius, push_mask


def extract_keypoints(fmap: np.ndarray, push_mask: np.ndarray, ws: Workspace,
                      k: int = KEYPOINT_LIMIT) -> list[np.ndarray]:
    """Greedy non-maximum suppression over the masked feature map."""
    m56 = pool_any(push_mask) if push_mask.shape[0] != fmap.shape[0] else push_mask
    if not m56.any():
        raise EmptyMaskError("push mask is empty")
    g = fmap.shape[0]
    scores = np.where(m56, fmap.astype(np.float64), -np.inf)
    rr, cc = np.mgrid[0:g, 0:g]
    pitch = ws.pixel_pitch
    points = []
    for _ in range(k):
        idx = int(np.argmax(scores))
        if not np.isfinite(scores.reshape(-1)[idx]):
            break
        r, c = divmod(idx, g)
        points.append(np.array([(4 * c + 2) * pitch, (4 * r + 2) * pitch]))
        scores[(rr - r) ** 2 + (cc - c) ** 2 < NMS_RADIUS_CELLS ** 2] = -np.inf
    return points


def _tip_clear(point: np.ndarray, scene: Scene, tip_z: float = PATH_Z) -> bool:
    tip = geo.WorldDisk(np.asarray(point, dtype=float), TIP_RADIUS)
    for obj in scene.objects:
        if obj.height <= tip_z:
            continue
        if geo.mtv(tip, obj.shape()) is not None:
            return False
    return True


def _chain(points: list[np.ndarray], anchor: np.ndarray) -> list[np.ndarray]:
    """Order by nearest-neighbor hops starting from the point farthest from anchor."""
    rest = list(points)
    start = max(range(len(rest)), key=lambda i: float(np.linalg.norm(rest[i] - anchor)))
    chain = [rest.pop(start)]
    while rest:
        last = chain[-1]
        nxt = min(range(len(rest)), key=lambda i: float(np.linalg.norm(rest[i] - last)))
        chain.append(rest.pop(nxt))
    return chain


def _resample(xy: np.ndarray, spacing: float = RESAMPLE_SPACING) -> np.ndarray:
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    total = float(seg.sum())
    if total < 1e-9:
        return xy[[0, -1]]
    stations = np.arange(0.0, total, spacing)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out = [np.interp(stations, cum, xy[:, d]) for d in range(2)]
    pts = np.stack(out, axis=1)
    return np.vstack([pts, xy[-1]])


def build_paths(keypoints: list, scene: Scene, mode: str = "dual",
                single_arm: str = RIGHT) -> list[PushPath]:
    """Partition keypoints by side of the target and chain each into a path."""
    if not keypoints:
        raise EmptyMaskError("no keypoints to connect")
    target = scene.target
    anchor = geo.centroid(target.shape()) if target is not None else np.array([0.5, 0.5])
    groups: list[tuple[str, list]] = []
    if mode == "dual":
        left_base = np.asarray(scene.arm_bases[0])
        right_base = np.asarray(scene.arm_bases[1])
        axis = right_base - left_base
        axis = axis / np.linalg.norm(axis)
        left_pts = [p for p in keypoints if (p - anchor) @ axis < 0]
        right_pts = [p for p in keypoints if (p - anchor) @ axis >= 0]
        if left_pts:
            groups.append((LEFT, left_pts))
        if right_pts:
            groups.append((RIGHT, right_pts))
    else:
        groups.append((single_arm, list(keypoints)))

    paths = []
    for arm, pts in groups:
        chain = _chain(pts, anchor)
        first = chain[0]
        away = first - anchor
        norm = float(np.linalg.norm(away))
        away = away / norm if norm > 1e-9 else np.array([1.0, 0.0])
        start = first + START_OFFSET * away
        for _ in range(START_SHIFT_LIMIT + 1):
            if _tip_clear(start, scene):
                break
            start = start + START_SHIFT * away
        else:
            raise NoFeasibleStartError("no collision-free start point found")
        xy = _resample(np.vstack([start[None], np.stack(chain)]))
        wp = np.column_stack([xy, np.full(len(xy), PATH_Z)])
        paths.append(PushPath(waypoints=wp, arm=arm))
    return paths


# ---------------------------------------------------------------------------
# Savitzky-Golay smoothing

def savgol_center_coeffs(window: int = SAVGOL_WINDOW, order: int = SAVGOL_ORDER) -> np.ndarray:
    """Least-squares smoothing coefficients for the window center."""
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    a = np.vander(x, order + 1, increasing=True)
    # value at x=0 of the fitted polynomial = first row of the projector
    proj = np.linalg.pinv(a.T @ a) @ a.T
    return proj[0]


def _fit_truncated(y: np.ndarray, i: int, half: int, order: int) -> float:
    lo, hi = max(0, i - half), min(len(y), i + half + 1)
    x = np.arange(lo, hi, dtype=np.float64) - i
    a = np.vander(x, min(order, len(x) - 1) + 1, increasing=True)
    beta, *_ = np.linalg.lstsq(a, y[lo:hi], rcond=None)
    return float(beta[0])


def savgol_smooth(path: PushPath, window: int = SAVGOL_WINDOW,
                  order: int = SAVGOL_ORDER) -> PushPath:
    """Per-coordinate polynomial smoothing; endpoints pass through exactly."""
    wp = path.waypoints
    n = len(wp)
    if n < window:
        return path
    half = window // 2
    coeffs = savgol_center_coeffs(window, order)
    out = np.empty_like(wp)
    for d in range(3):
        y = wp[:, d].astype(np.float64)
        smoothed = np.convolve(y, coeffs[::-1], mode="valid")
        out[half:n - half, d] = smoothed
        for i in list(range(half)) + list(range(n - half, n)):
            out[i, d] = _fit_truncated(y, i, half, order)
    out[0] = wp[0]
    out[-1] = wp[-1]
    out[:, 2] = np.clip(out[:, 2], PATH_Z_MIN, PATH_Z_MAX)
    return PushPath(waypoints=out, arm=path.arm)


def validate_path(path: PushPath, scene: Scene, arm: str | None = None) -> list[str]:
    """Reasons the path cannot execute; empty list means ok."""
    arm = arm or path.arm
    ws = scene.workspace
    wp = path.waypoints
    reasons = []
    inside = ((wp[:, 0] >= 0) & (wp[:, 0] <= ws.extent)
              & (wp[:, 1] >= 0) & (wp[:, 1] <= ws.extent))
    if not inside.all():
        reasons.append(OUT_OF_WORKSPACE)
    if not all(check_reachable(p, arm, scene) for p in wp[inside]):
        reasons.append(UNREACHABLE)
    if np.any(wp[:, 2] < PATH_Z_MIN - 1e-12) or np.any(wp[:, 2] > PATH_Z_MAX + 1e-12):
        reasons.append(BAD_HEIGHT)
    if inside[0] and not _tip_clear(wp[0, :2], scene, float(wp[0, 2])):
        reasons.append(BLOCKED_START)
    return reasons


def dual_stagger_flag(paths: list[PushPath], threshold: float = 0.10) -> bool:
    """Informational: do the two paths ever come close at matched indices."""
    if len(paths) != 2:
        return False
    a, b = paths[0].waypoints, paths[1].waypoints
    n = min(len(a), len(b))
    d = np.linalg.norm(a[:n, :2] - b[:n, :2], axis=1)
    return bool(np.any(d < threshold))


def refine_path(path: PushPath, scene: Scene) -> tuple[PushPath, list[str]]:
    """Smooth, then clamp-and-resmooth fixable violations a few times."""
    ws = scene.workspace
    p = savgol_smooth(path)
    for _ in range(REFINE_ROUNDS):
        reasons = validate_path(p, scene)
        fixable = set(reasons) <= {BAD_HEIGHT, OUT_OF_WORKSPACE}
        if not reasons or not fixable:
            return p, reasons
        wp = p.waypoints.copy()
        margin = ws.pixel_pitch / 4
        wp[:, 0] = np.clip(wp[:, 0], margin, ws.extent - margin)
        wp[:, 1] = np.clip(wp[:, 1], margin, ws.extent - margin)
        wp[:, 2] = np.clip(wp[:, 2], PATH_Z_MIN, PATH_Z_MAX)
        p = savgol_smooth(PushPath(waypoints=wp, arm=p.arm))
    return p, validate_path(p, scene)


def decode_motion(sample: ActionSample, masks: MaskPair, scene: Scene,
                  obs: Observation, oset: OrientationSet, arms: str = "dual",
                  single_arm: str = RIGHT) -> DecodedMotion:
    """Branch on the sampled pixel and build the full primitive motion.

    In eval mode the argmax pixel makes this equivalent to picking the
    higher of the two masked scores (score_actions).
    """
    r, c = sample.pixel
    ws = scene.workspace
    if masks.target_mask_56[r, c]:
        pose = decode_grasp((r, c), obs.depth, obs.target_mask,
                            sample.avh_ranking, oset, ws)
        return DecodedMotion(kind="grasp", grasp=pose)
    footprint = target_footprint_mask(scene)
    _, push_mask = contour_radius(footprint, ws)
    try:
        keypoints = extract_keypoints(sample.feature_map, push_mask, ws)
        paths = build_paths(keypoints, scene, mode=arms, single_arm=single_arm)
    except EmptyMaskError:
        return DecodedMotion(kind="invalid", reason="EmptyPushMask")
    except NoFeasibleStartError:
        return DecodedMotion(kind="invalid", reason="NoFeasibleStart")
    final = []
    for p in paths:
        refined, reasons = refine_path(p, scene)
        if reasons:
            return DecodedMotion(kind="invalid", reason=reasons[0])
        final.append(refined)
    return DecodedMotion(kind="push", paths=tuple(final))
