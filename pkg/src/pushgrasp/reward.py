"""Target isolate rate and the fuzzy push/grasp reward.

The isolate rate is the free fraction of the ring between the target
footprint and its 1.5x expansion, rasterized on the workspace grid. The
reward maps (action type, validity, success, isolate rate) into [0, 1]
with three bands split at 1/3 and 2/3: correct-band successes earn 1.0,
correct-band failures 0.5, misguided actions 0.0, and the medium band
interpolates failures linearly between 0.5 and 0.25.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .world import Scene, rasterize_shape, render_observation

GRASP, PUSH = "grasp", "push"

RING_SCALE = 1.5
FREE_DEPTH = 0.005
BAND_LOW = 1.0 / 3.0
BAND_HIGH = 2.0 / 3.0
PUSH_SUCCESS_DELTA = 0.02


@dataclass(frozen=True)
class RewardInput:
    action_type: str    # GRASP or PUSH
    valid: bool
    success: bool
    isolate: float      # measured before the action

    def __post_init__(self):
        if self.action_type not in (GRASP, PUSH):
            raise ValueError(f"unknown action type {self.action_type!r}")
        if not self.valid and self.success:
            raise ValueError("an invalid action cannot be successful")


def _dilate8(mask: np.ndarray) -> np.ndarray:
    """One-cell 8-neighborhood dilation."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    out[1:, 1:] |= mask[:-1, :-1]
    out[1:, :-1] |= mask[:-1, 1:]
    out[:-1, 1:] |= mask[1:, :-1]
    out[:-1, :-1] |= mask[1:, 1:]
    return out


def isolate_rate(scene: Scene, target_id: int) -> float:
    """Free fraction of the expanded-footprint ring around the target.

    Cells bordering the footprint raster count as covered by the target
    (they straddle its boundary), so they belong to neither side of the
    ratio; a lone target on the table still scores exactly 1.
    """
    target = scene.object_by_id(target_id)
    if target is None:
        return 1.0
    ws = scene.workspace
    shape = target.shape()
    footprint = rasterize_shape(shape, ws)
    expanded = rasterize_shape(geo.scaled_about_centroid(shape, RING_SCALE), ws)
    ring = expanded & ~_dilate8(footprint)
    total = int(ring.sum())
    if total == 0:
        return 1.0
    depth = render_observation(scene).depth
    free = ring & (depth < FREE_DEPTH)
    return float(free.sum()) / total


def fuzzy_reward(inp: RewardInput, smooth: bool = False,
                 success_dominates: bool = False) -> float:
    """Reward in [0, 1]; invalid actions always score 0."""
    if not inp.valid:
        return 0.0
    if success_dominates and inp.success:
        return 1.0
    if smooth:
        return _smooth_reward(inp)
    r = float(inp.isolate)
    if inp.action_type == GRASP:
        if r <= BAND_LOW:
            return 0.0  # misguided regardless of outcome
        if r >= BAND_HIGH:
            return 1.0 if inp.success else 0.5
        if inp.success:
            return 1.0
        return 0.25 + 0.25 * (r - BAND_LOW) / (BAND_HIGH - BAND_LOW)
    # push
    if r >= BAND_HIGH:
        return 0.0
    if r <= BAND_LOW:
        return 1.0 if inp.success else 0.5
    if inp.success:
        return 1.0
    return 0.5 - 0.25 * (r - BAND_LOW) / (BAND_HIGH - BAND_LOW)


def _memberships(r: float) -> np.ndarray:
    """Triangular low/medium/high memberships over [0, 1]."""
    low = max(0.0, 1.0 - r / 0.5)
    med = max(0.0, 1.0 - abs(r - 0.5) / 0.5)
    high = max(0.0, (r - 0.5) / 0.5)
    return np.array([low, med, high])


# per-band crisp values, (success, fail) per action type
_BAND_VALUES = {
    GRASP: ((0.0, 0.0), (1.0, 0.375), (1.0, 0.5)),
    PUSH: ((1.0, 0.5), (1.0, 0.375), (0.0, 0.0)),
}


def _smooth_reward(inp: RewardInput) -> float:
    mu = _memberships(min(1.0, max(0.0, float(inp.isolate))))
    pick = 0 if inp.success else 1
    values = np.array([band[pick] for band in _BAND_VALUES[inp.action_type]])
    return float(mu @ values / mu.sum())


def push_success(r_before: float, r_after: float) -> bool:
    """A push succeeds when it measurably clears the target's surroundings."""
    return (r_after - r_before) >= PUSH_SUCCESS_DELTA
