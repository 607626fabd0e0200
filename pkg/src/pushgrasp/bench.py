"""Scenario generation, episode execution, metric aggregation, train envs.

Case taxonomy: 1 packed contact rings (10 objects), 2 dense clutter in a
0.4 m-radius drop disk (20), 3 dense clutter with a partial occluder (25),
4 target fully hidden under a flat occluder (30), 5 uniform random poses
(35). Episodes terminate on target grasped, five consecutive failed
grasps, target leaving the workspace, or the step limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import reward as rw
from .agent import ActionSample, sample_action
from .codec import OrientationSet, default_orientation_set, surrogate_avh
from .decode import MaskPair, decode_motion, make_masks
from .sim import RIGHT, execute_grasp, execute_push
from .world import (DEFAULT_ARM_BASES, RigidObject, Scene, Workspace,
                    rasterize_shape, render_observation)

CASE_OBJECT_COUNTS = {1: 10, 2: 20, 3: 25, 4: 30, 5: 35}
DROP_DISK_RADIUS = 0.2      # the 0.4 m drop disk, as a radius from its center
DROP_DISK_COUNT = 20        # the disk is sized for this many objects
STEP_LIMIT = 50
MAX_REJECTIONS = 10_000
TARGET_COLOR = (0.15, 0.75, 0.2)

PALETTE = (
    (0.31, 0.48, 0.65), (0.87, 0.52, 0.32), (0.61, 0.46, 0.37),
    (0.93, 0.79, 0.28), (0.73, 0.69, 0.67), (0.84, 0.37, 0.37),
    (0.69, 0.48, 0.63), (0.46, 0.72, 0.70),
)


class PlacementFailureError(RuntimeError):
    """Rejection sampling exhausted its budget; try another seed."""


@dataclass(frozen=True)
class ScenarioSpec:
    case: int
    seed: int
    arms: str = "dual"
    object_count: int | None = None

    def __post_init__(self):
        if self.case not in CASE_OBJECT_COUNTS:
            raise ValueError(f"case must be 1..5, got {self.case}")
        if self.object_count is not None and self.object_count < 1:
            raise ValueError("object_count must be positive")

    @property
    def count(self) -> int:
        return self.object_count or CASE_OBJECT_COUNTS[self.case]


@dataclass(frozen=True)
class EpisodeResult:
    completed: bool
    grasp_attempts: int
    grasp_successes: int
    motions: int
    steps: int
    fail_reason: str  # "none" | "FiveConsecutiveFails" | "TargetLost" | "StepLimit"


@dataclass(frozen=True)
class MetricsSummary:
    c: float
    c_se: float
    gs: float
    gs_se: float
    mn: float
    mn_se: float
    n_runs: int


def sample_footprint(rng: np.random.Generator):
    kind = int(rng.integers(4))
    if kind == 0:
        return geo.Disk(float(rng.uniform(0.02, 0.045)))
    if kind == 1:
        side = float(rng.uniform(0.035, 0.07))
        return geo.rectangle(side, side)
    if kind == 2:
        return geo.rectangle(float(rng.uniform(0.05, 0.10)), float(rng.uniform(0.03, 0.05)))
    return geo.regular_polygon(3, float(rng.uniform(0.03, 0.05)))


def _sample_object(rng, oid, is_target=False):
    fp = sample_footprint(rng)
    h = float(rng.uniform(0.02, 0.05))
    color = TARGET_COLOR if is_target else PALETTE[int(rng.integers(len(PALETTE)))]
    yaw = float(rng.uniform(0, 2 * math.pi))
    return fp, h, color, yaw


def _shape_at(fp, x, y, yaw):
    return geo.place(fp, (x, y, yaw))


def _inside_workspace(shape, ws: Workspace, margin: float = 0.0) -> bool:
    if isinstance(shape, geo.WorldDisk):
        lo = shape.center - shape.radius
        hi = shape.center + shape.radius
    else:
        lo = shape.verts.min(axis=0)
        hi = shape.verts.max(axis=0)
    return bool((lo >= margin).all() and (hi <= ws.extent - margin).all())


class _Placed:
    """Placed shapes with a centroid/radius broad-phase."""

    def __init__(self):
        self.shapes = []
        self.cent = np.empty((0, 2))
        self.crad = np.empty(0)

    def add(self, shape) -> None:
        self.shapes.append(shape)
        self.cent = np.vstack([self.cent, geo.centroid(shape)])
        self.crad = np.append(self.crad, geo.circumradius(shape))

    def __len__(self):
        return len(self.shapes)

    def max_penetration(self, shape) -> float:
        if not self.shapes:
            return 0.0
        c = geo.centroid(shape)
        r = geo.circumradius(shape)
        near = np.nonzero(np.sum((self.cent - c) ** 2, axis=1) <= (self.crad + r) ** 2)[0]
        worst = 0.0
        for i in near:
            v = geo.mtv(shape, self.shapes[i])
            if v is not None:
                worst = max(worst, float(np.linalg.norm(v)))
        return worst


def _slide_to_contact(fp, yaw, theta, placed: _Placed, start_dist=0.35):
    """Walk a shape inward along -theta until it touches, then back off.

    Coarse 4 mm steps find the contact, a 0.5 mm refinement tightens it.
    Returns the final position, or None when even start_dist collides.
    """
    direction = np.array([math.cos(theta), math.sin(theta)])
    center = np.array([0.5, 0.5])

    def collides(d):
        pos = center + d * direction
        return placed.max_penetration(_shape_at(fp, pos[0], pos[1], yaw)) > 0

    if collides(start_dist):
        return None
    d = start_dist
    while d > 0.004 and not collides(d - 0.004):
        d -= 0.004
    while d > 0.0005 and not collides(d - 0.0005):
        d -= 0.0005
    return center + d * direction


def _support(shape, center, bearing: float) -> float:
    """Max projection of the shape onto the bearing direction from center."""
    u = np.array([math.cos(bearing), math.sin(bearing)])
    if isinstance(shape, geo.WorldDisk):
        return float((shape.center - center) @ u) + shape.radius
    return float(np.max((shape.verts - center) @ u))


def _generate_case1(rng, count, ws):
    """Disk target dead center with disk neighbors packed in contact rings.

    Disk-on-disk contact is exact: a neighbor of radius r sits at distance
    r_t + r and spans an angular half-width asin(r / (r_t + r)). The inner
    ring is drawn until it can close, then its angular slack is spread
    evenly; leftover objects settle into a second contact ring. The
    expansion ring around the target ends up almost fully occupied.
    """
    r_t = float(rng.uniform(0.038, 0.045))
    h = float(rng.uniform(0.02, 0.05))
    objects = [RigidObject(0, geo.Disk(r_t), (0.5, 0.5, 0.0), h, TARGET_COLOR, True)]
    center = np.array([0.5, 0.5])
    n_total = count - 1

    def gamma_of(r):
        return math.asin(r / (r_t + r))

    def radius_of(gamma):
        s = math.sin(gamma)
        return r_t * s / (1.0 - s)

    # inner ring: regular draws, then two fillers close the leftover exactly
    ring1_radii = []
    remaining = 2 * math.pi
    while len(ring1_radii) < n_total and remaining > 2 * (2 * gamma_of(0.045)):
        r = float(rng.uniform(0.020, 0.0225))
        ring1_radii.append(r)
        remaining -= 2 * gamma_of(r)
    for _ in range(2):
        if len(ring1_radii) >= n_total:
            break
        r = float(np.clip(radius_of(remaining / 4), 0.02, 0.045))
        ring1_radii.append(r)
        remaining -= 2 * gamma_of(r)

    phase = float(rng.uniform(0, 2 * math.pi))
    angle = phase
    oid = 1
    for r in ring1_radii:
        g = gamma_of(r)
        a = angle + g
        d = r_t + r + 0.0004
        pos = center + d * np.array([math.cos(a), math.sin(a)])
        h = float(rng.uniform(0.02, 0.05))
        color = PALETTE[int(rng.integers(len(PALETTE)))]
        objects.append(RigidObject(oid, geo.Disk(r),
                                   (float(pos[0]), float(pos[1]), 0.0), h, color, False))
        angle = a + g
        oid += 1
    # leftovers rest in a second contact ring
    base2 = r_t + 2 * max(ring1_radii, default=0.028)
    angle = float(rng.uniform(0, 2 * math.pi))
    for i in range(n_total - len(ring1_radii)):
        r = float(rng.uniform(0.021, 0.028))
        g = math.asin(min(1.0, r / (base2 + r)))
        a = angle + g
        d = base2 + r + 0.0004
        pos = center + d * np.array([math.cos(a), math.sin(a)])
        h = float(rng.uniform(0.02, 0.05))
        color = PALETTE[int(rng.integers(len(PALETTE)))]
        objects.append(RigidObject(oid, geo.Disk(r),
                                   (float(pos[0]), float(pos[1]), 0.0), h, color, False))
        angle = a + g
        oid += 1
    return objects


def _rejection_place(rng, fp, yaw, placed: _Placed, ws, sampler, tol=1e-6, budget=None):
    budget = budget if budget is not None else MAX_REJECTIONS
    for _ in range(budget):
        x, y = sampler()
        shape = _shape_at(fp, x, y, yaw)
        if not _inside_workspace(shape, ws):
            continue
        if placed.max_penetration(shape) <= tol:
            return float(x), float(y)
    raise PlacementFailureError("rejection sampling budget exhausted")


def _disk_sampler(rng, center, radius):
    def sample():
        r = radius * math.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * math.pi)
        return center[0] + r * math.cos(a), center[1] + r * math.sin(a)
    return sample


def _generate_drop(rng, count, ws, occlusion: str | None):
    """Cases 2-4: overlap-rejected drop into the central disk.

    Neighbors fill the disk first; the target is squeezed into a central
    pocket afterwards so it starts crowded. The disk area scales with the
    object count to keep the packing density at the 20-object baseline.
    An occluder, when asked for, is laid over the target last.
    """
    radius = DROP_DISK_RADIUS * math.sqrt(max(1.0, count / DROP_DISK_COUNT))
    n_occluders = 1 if occlusion is not None else 0
    n_neighbors = count - 1 - n_occluders
    neighbors = []
    placed = _Placed()
    occupancy = np.zeros((ws.grid_size,) * 2, dtype=bool)
    for oid in range(2 if n_occluders else 1, n_neighbors + (2 if n_occluders else 1)):
        fp, h, color, yaw = _sample_object(rng, oid)
        x, y = _rejection_place(rng, fp, yaw, placed, ws,
                                _disk_sampler(rng, (0.5, 0.5), radius))
        neighbors.append(RigidObject(oid, fp, (x, y, yaw), h, color, False))
        placed.add(neighbors[-1].shape())
        occupancy |= rasterize_shape(neighbors[-1].shape(), ws)
    # squeeze the target into the most crowded admissible pocket
    fp, h, color, yaw = _sample_object(rng, 0, is_target=True)
    sampler = _disk_sampler(rng, (0.5, 0.5), 0.6 * radius)
    best = None
    found = 0
    for _ in range(MAX_REJECTIONS):
        x, y = sampler()
        shape = _shape_at(fp, x, y, yaw)
        if not _inside_workspace(shape, ws) or placed.max_penetration(shape) > 1e-6:
            continue
        found += 1
        ring = (rasterize_shape(geo.scaled_about_centroid(shape, 1.5), ws)
                & ~rasterize_shape(shape, ws))
        total = int(ring.sum())
        crowding = float((ring & occupancy).sum()) / total if total else 0.0
        if best is None or crowding > best[0]:
            best = (crowding, float(x), float(y))
        if found >= 40:
            break
    if best is None:
        raise PlacementFailureError("no admissible pocket for the target")
    target = RigidObject(0, fp, (best[1], best[2], yaw), h, color, True)
    objects = [target] + neighbors
    if occlusion is not None:
        objects.insert(1, _make_occluder(rng, target, ws, occlusion, 1))
    return objects


def _make_occluder(rng, target: RigidObject, ws, occlusion: str, oid: int):
    """A flat object above the target covering >= 30% (partial) or all (full)."""
    t_shape = target.shape()
    t_centroid = geo.centroid(t_shape)
    t_r = geo.circumradius(t_shape)
    height = target.height + float(rng.uniform(0.005, 0.015))
    color = PALETTE[int(rng.integers(len(PALETTE)))]
    if occlusion == "full":
        fp = geo.Disk(t_r * float(rng.uniform(1.15, 1.4)))
        return RigidObject(oid, fp, (float(t_centroid[0]), float(t_centroid[1]), 0.0),
                           height, color, False)
    # partial: slide a flat slab over the target until raster overlap >= 30%
    fp = geo.rectangle(float(rng.uniform(0.07, 0.11)), float(rng.uniform(0.05, 0.08)))
    yaw = float(rng.uniform(0, 2 * math.pi))
    t_mask = rasterize_shape(t_shape, ws)
    t_cells = max(1, int(t_mask.sum()))
    direction = np.array([math.cos(yaw), math.sin(yaw)])
    o_r = geo.circumradius(_shape_at(fp, 0, 0, yaw))
    for step in range(400):
        offset = (t_r + o_r) - 0.002 * step
        pos = t_centroid + max(0.0, offset) * direction
        shape = _shape_at(fp, pos[0], pos[1], yaw)
        if not _inside_workspace(shape, ws):
            continue
        cover = rasterize_shape(shape, ws)
        frac = float((cover & t_mask).sum()) / t_cells
        if 0.30 <= frac <= 0.90:
            return RigidObject(oid, fp, (float(pos[0]), float(pos[1]), yaw),
                               height, color, False)
        if frac > 0.90:
            break
    raise PlacementFailureError("could not realize a partial occlusion")


def _generate_case5(rng, count, ws):
    objects = []
    placed = _Placed()
    for oid in range(count):
        is_target = oid == 0
        fp, h, color, yaw = _sample_object(rng, oid, is_target=is_target)

        def sampler():
            return rng.uniform(0, ws.extent), rng.uniform(0, ws.extent)

        x, y = _rejection_place(rng, fp, yaw, placed, ws, sampler, tol=0.001)
        objects.append(RigidObject(oid, fp, (x, y, yaw), h, color, is_target))
        placed.add(objects[-1].shape())
    return objects


def generate_scenario(spec: ScenarioSpec) -> Scene:
    """Seeded scene for one of the five benchmark cases."""
    ws = Workspace()
    rng = np.random.default_rng(spec.seed)
    if spec.case == 1:
        objects = _generate_case1(rng, spec.count, ws)
    elif spec.case == 2:
        objects = _generate_drop(rng, spec.count, ws, occlusion=None)
    elif spec.case == 3:
        objects = _generate_drop(rng, spec.count, ws, occlusion="partial")
    elif spec.case == 4:
        objects = _generate_drop(rng, spec.count, ws, occlusion="full")
    else:
        objects = _generate_case5(rng, spec.count, ws)
    return Scene(workspace=ws, objects=tuple(objects), target_id=0,
                 arm_bases=DEFAULT_ARM_BASES, rng_seed=spec.seed)


# ---------------------------------------------------------------------------
# Training scenes (smaller, faster distributions per curriculum)

def sample_training_scene(curriculum: str, rng: np.random.Generator) -> Scene:
    ws = Workspace()
    if curriculum == "grasp":
        count = 1 + int(rng.integers(0, 4))
        objects = []
        placed = []
        for oid in range(count):
            fp, h, color, yaw = _sample_object(rng, oid, is_target=oid == 0)
            pos = None
            for _ in range(200):
                x, y = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)
                shape = _shape_at(fp, x, y, yaw)
                if not _inside_workspace(shape, ws):
                    continue
                if all(np.linalg.norm(geo.centroid(shape) - geo.centroid(s))
                       >= geo.circumradius(shape) + geo.circumradius(s) + 0.06
                       for s in placed):
                    pos = (float(x), float(y))
                    break
            if pos is None:
                if oid == 0:
                    raise PlacementFailureError("grasp scene placement failed")
                break  # fewer filler objects is fine
            objects.append(RigidObject(oid, fp, (pos[0], pos[1], yaw), h, color, oid == 0))
            placed.append(_shape_at(fp, pos[0], pos[1], yaw))
        seed = int(rng.integers(2 ** 31))
        return Scene(ws, tuple(objects), 0, DEFAULT_ARM_BASES, seed)
    if curriculum == "packed":
        count = 5 + int(rng.integers(0, 4))
        objects = _generate_case1(rng, count, ws)
    elif curriculum == "clutter":
        count = 8 + int(rng.integers(0, 7))
        objects = []
        placed = _Placed()
        fp, h, color, yaw = _sample_object(rng, 0, is_target=True)
        objects.append(RigidObject(0, fp, (0.5, 0.5, yaw), h, color, True))
        placed.add(objects[0].shape())
        radius = float(rng.uniform(0.12, 0.25))
        for oid in range(1, count):
            fp, h, color, yaw = _sample_object(rng, oid)
            x, y = _rejection_place(rng, fp, yaw, placed, ws,
                                    _disk_sampler(rng, (0.5, 0.5), radius))
            objects.append(RigidObject(oid, fp, (x, y, yaw), h, color, False))
            placed.add(objects[-1].shape())
    else:
        raise ValueError(f"unknown curriculum {curriculum!r}")
    seed = int(rng.integers(2 ** 31))
    return Scene(ws, tuple(objects), 0, DEFAULT_ARM_BASES, seed)


# ---------------------------------------------------------------------------
# Episode execution

def make_featurizer(oset: OrientationSet | None = None):
    """scene -> surrogate heatmap (and optionally the decoder masks)."""
    oset = oset or default_orientation_set()

    def featurize(scene: Scene, with_masks: bool = True):
        obs = render_observation(scene)
        avh = surrogate_avh(obs, oset, scene.workspace)
        if not with_masks:
            return avh
        return avh, make_masks(scene, obs)

    return featurize


def net_policy(policy_net):
    """Adapt a PolicyNet into the run_episode callable."""

    def act(avh, obs=None, masks=None, scene=None):
        out = policy_net.forward(avh.astype(np.float32, copy=False))
        return policy_net.split(out)

    return act


def run_episode(policy, scene: Scene, arms: str = "dual",
                step_limit: int = STEP_LIMIT, oset: OrientationSet | None = None,
                single_arm: str = RIGHT, recorder=None) -> EpisodeResult:
    """Deterministic eval rollout with the paper-style termination rules.

    `policy(avh, obs, masks, scene) -> (feature map, orientation scores)`.
    """
    oset = oset or default_orientation_set()
    consecutive_fails = 0
    attempts = successes = motions = steps = 0
    while steps < step_limit:
        obs = render_observation(scene)
        avh = surrogate_avh(obs, oset, scene.workspace)
        masks = make_masks(scene, obs)
        fmap, scores = policy(avh, obs, masks, scene)
        sample = sample_action(fmap, scores, masks.target_mask_56,
                               masks.expanded_mask_56, mode="eval")
        motion = decode_motion(sample, masks, scene, obs, oset,
                               arms=arms, single_arm=single_arm)
        steps += 1
        if recorder is not None:
            recorder(steps, scene, obs, motion)
        if motion.kind == "grasp":
            scene, outcome = execute_grasp(scene, motion.grasp)
            attempts += 1
            motions += 1
            if outcome.success:
                return EpisodeResult(True, attempts, successes + 1,
                                     motions, steps, "none")
            consecutive_fails += 1
            if consecutive_fails >= 5:
                return EpisodeResult(False, attempts, successes, motions, steps,
                                     "FiveConsecutiveFails")
        elif motion.kind == "push":
            scene, outcome = execute_push(scene, motion.paths)
            motions += outcome.motion_count
            consecutive_fails = 0
        if scene.target is None:
            return EpisodeResult(False, attempts, successes, motions, steps,
                                 "TargetLost")
    return EpisodeResult(False, attempts, successes, motions, steps, "StepLimit")


def aggregate(results: list[EpisodeResult]) -> MetricsSummary:
    """C / GS / MN with standard errors; GS and MN pool completed runs only."""
    if not results:
        raise ValueError("need at least one episode result")
    n = len(results)
    completed = [r for r in results if r.completed]
    k = len(completed)
    p = k / n
    c_se = 100.0 * math.sqrt(p * (1 - p) / n)
    if k == 0:
        return MetricsSummary(0.0, c_se, 0.0, 0.0, 0.0, 0.0, n)
    att = sum(r.grasp_attempts for r in completed)
    suc = sum(r.grasp_successes for r in completed)
    assert att > 0, "a completed run always contains its successful grasp"
    q = suc / att
    gs_se = 100.0 * math.sqrt(q * (1 - q) / att)
    mot = [r.motions for r in completed]
    mn = float(np.mean(mot))
    mn_se = float(np.std(mot, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return MetricsSummary(100.0 * p, c_se, 100.0 * q, gs_se, mn, mn_se, n)


RESULTS_HEADER = "case,seed,arms,completed,attempts,successes,motions,steps,fail_reason"


def format_result_row(case, seed, arms, r: EpisodeResult) -> str:
    return (f"{case},{seed},{arms},{int(r.completed)},{r.grasp_attempts},"
            f"{r.grasp_successes},{r.motions},{r.steps},{r.fail_reason}")


def format_summary(m: MetricsSummary) -> list[str]:
    return [
        f"# n_runs {m.n_runs}",
        f"# C {m.c:.2f} +- {m.c_se:.2f}",
        f"# GS {m.gs:.2f} +- {m.gs_se:.2f}",
        f"# MN {m.mn:.2f} +- {m.mn_se:.2f}",
    ]


def episode_seed(base_seed: int, case: int, index: int) -> int:
    """Stable per-episode scenario seed, independent of the arm mode."""
    return int(np.random.SeedSequence([base_seed, case, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Training environment

class TrainEnv:
    """Gym-style wrapper: scenario sampling, decoding, reward, termination."""

    def __init__(self, seed_seq, curriculum: str = "packed", arms: str = "dual",
                 step_limit: int = 30, oset: OrientationSet | None = None,
                 smooth_reward: bool = False, success_dominates: bool = False,
                 single_arm: str = RIGHT):
        self.rng = np.random.default_rng(seed_seq)
        self.curriculum = curriculum
        self.main_curriculum = curriculum
        self.arms = arms
        self.step_limit = step_limit
        self.oset = oset or default_orientation_set()
        self.smooth_reward = smooth_reward
        self.success_dominates = success_dominates
        self.single_arm = single_arm
        self.scene: Scene | None = None

    def set_curriculum(self, name: str) -> None:
        self.curriculum = name

    def reset(self) -> Scene:
        self.scene = sample_training_scene(self.curriculum, self.rng)
        self.steps = 0
        self.consecutive_fails = 0
        self._refresh()
        return self.scene

    def _refresh(self) -> None:
        self.obs = render_observation(self.scene)
        self.masks = make_masks(self.scene, self.obs)

    def step(self, sample: ActionSample):
        scene = self.scene
        r_before = rw.isolate_rate(scene, scene.target_id)
        motion = decode_motion(sample, self.masks, scene, self.obs, self.oset,
                               arms=self.arms, single_arm=self.single_arm)
        self.steps += 1
        done = False
        info = {"action": motion.kind, "success": False, "motions": 0}
        if motion.kind == "invalid":
            reward = 0.0
        elif motion.kind == "grasp":
            new_scene, outcome = execute_grasp(scene, motion.grasp)
            info["success"] = outcome.success
            info["motions"] = 1
            reward = rw.fuzzy_reward(
                rw.RewardInput(rw.GRASP, True, outcome.success, r_before),
                smooth=self.smooth_reward, success_dominates=self.success_dominates)
            self.scene = new_scene
            if outcome.success:
                done = True
            else:
                self.consecutive_fails += 1
                if self.consecutive_fails >= 5:
                    done = True
        else:
            new_scene, outcome = execute_push(scene, motion.paths)
            info["motions"] = outcome.motion_count
            self.consecutive_fails = 0
            self.scene = new_scene
            if new_scene.target is None:
                # pushing the target off the table fails the task outright
                reward = 0.0
                done = True
            else:
                r_after = rw.isolate_rate(new_scene, new_scene.target_id)
                success = rw.push_success(r_before, r_after)
                info["success"] = success
                reward = rw.fuzzy_reward(
                    rw.RewardInput(rw.PUSH, True, success, r_before),
                    smooth=self.smooth_reward, success_dominates=self.success_dominates)
        if self.scene.target is None and not done:
            reward = 0.0
            done = True
        if self.steps >= self.step_limit:
            done = True
        if not done:
            self._refresh()
        return reward, done, info
