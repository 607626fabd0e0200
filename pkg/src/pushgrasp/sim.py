"""Quasi-static execution of push and grasp primitives.

Pushing sweeps a fingertip disk along a dense polyline; any object the tip
penetrates is translated out by the minimum separating vector, after which
object-object overlaps are resolved pairwise (50/50 split) and objects
whose centroid leaves the workspace are removed. Grasping is a set of
geometric feasibility clauses evaluated against the 2.5D scene. There is
no momentum: objects move only while contacted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .codec import GripperOrientation, tilt_from_vertical
from .world import Scene, RigidObject

TIP_RADIUS = 0.012
SWEEP_STEP = 0.002           # internal tip step along the path
PATH_Z_MIN = 0.005
PATH_Z_MAX = 0.15
MAX_WAYPOINT_GAP = 0.05
STAGGER_DISTANCE = 0.10      # dual tips closer than this defer the second path
REACH_RADIUS = 0.85
MAX_OPENING = 0.140
GRASP_WIDTH_MARGIN = 0.004
FINGER_WIDTH = 0.02          # across the closing axis
FINGER_THICKNESS = 0.01      # along the closing axis
TILT_CAP = math.radians(45.0)
RESOLUTION_ROUNDS = 32
OVERLAP_TOLERANCE = 0.0005

LEFT, RIGHT = "left", "right"


class InvalidPathError(ValueError):
    """Push path violates its geometric preconditions; the scene is untouched."""


@dataclass(frozen=True)
class PushPath:
    waypoints: np.ndarray  # (n, 3), n >= 2
    arm: str = RIGHT

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        object.__setattr__(self, "waypoints", wp)
        if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 3:
            raise InvalidPathError("path needs at least two 3D waypoints")
        if self.arm not in (LEFT, RIGHT):
            raise InvalidPathError(f"unknown arm {self.arm!r}")


@dataclass(frozen=True)
class GraspPose:
    translation: np.ndarray  # (3,)
    orientation: GripperOrientation
    max_opening: float = MAX_OPENING

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))


@dataclass(frozen=True)
class PushOutcome:
    executed: bool
    displaced_ids: tuple
    out_of_bounds_ids: tuple
    motion_count: int


@dataclass(frozen=True)
class GraspOutcome:
    attempted: bool
    success: bool
    grasped_ids: tuple = ()
    failure: str = ""


def check_reachable(p, arm: str, scene: Scene) -> bool:
    """True when the arm's base can reach the (x, y) of p inside the workspace."""
    x, y = float(p[0]), float(p[1])
    ext = scene.workspace.extent
    if not (0.0 <= x <= ext and 0.0 <= y <= ext):
        return False
    base = scene.arm_bases[0] if arm == LEFT else scene.arm_bases[1]
    return math.hypot(x - base[0], y - base[1]) <= REACH_RADIUS


def _check_path_geometry(path: PushPath, scene: Scene) -> None:
    wp = path.waypoints
    ext = scene.workspace.extent
    if np.any(wp[:, 0] < 0) or np.any(wp[:, 0] > ext) or np.any(wp[:, 1] < 0) or np.any(wp[:, 1] > ext):
        raise InvalidPathError("waypoint outside workspace")
    if np.any(wp[:, 2] < PATH_Z_MIN - 1e-12) or np.any(wp[:, 2] > PATH_Z_MAX + 1e-12):
        raise InvalidPathError("waypoint height out of bounds")
    gaps = np.linalg.norm(np.diff(wp[:, :2], axis=0), axis=1)
    if np.any(gaps > MAX_WAYPOINT_GAP + 1e-9):
        raise InvalidPathError("waypoints spaced wider than 0.05 m")


def _densify(path: PushPath) -> np.ndarray:
    """Subdivide every segment to at most SWEEP_STEP spacing (3D points)."""
    wp = path.waypoints
    pts = [wp[0]]
    for a, b in zip(wp[:-1], wp[1:]):
        seg = float(np.linalg.norm(b[:2] - a[:2]))
        n = max(1, int(math.ceil(seg / SWEEP_STEP)))
        for k in range(1, n + 1):
            pts.append(a + (b - a) * (k / n))
    return np.asarray(pts)


@dataclass
class _BodyState:
    """Mutable per-object state while a primitive executes."""

    obj: RigidObject
    pos: np.ndarray                  # current (x, y)
    local: object = field(init=False)  # yaw-rotated footprint, origin at pos
    centroid_off: np.ndarray = field(init=False)
    circumradius: float = field(init=False)

    def __post_init__(self):
        x, y, yaw = self.obj.pose
        shape = geo.place(self.obj.footprint, (0.0, 0.0, yaw))
        self.local = shape
        self.centroid_off = geo.centroid(shape)
        self.circumradius = geo.circumradius(shape) + float(np.linalg.norm(self.centroid_off))

    def shape(self):
        return geo.translated(self.local, self.pos)

    def centroid(self) -> np.ndarray:
        return self.pos + self.centroid_off


class _Bodies:
    """Mutable world copy with vectorized broad-phase arrays."""

    def __init__(self, scene: Scene):
        self.states: dict[int, _BodyState] = {
            o.id: _BodyState(o, np.array([o.pose[0], o.pose[1]], dtype=float))
            for o in scene.objects}
        self.ids = sorted(self.states)
        self._index = {oid: i for i, oid in enumerate(self.ids)}
        self.cent = np.array([self.states[i].centroid() for i in self.ids]
                             or np.empty((0, 2)))
        self.crad = np.array([self.states[i].circumradius for i in self.ids])
        self.height = np.array([self.states[i].obj.height for i in self.ids])
        self.alive = np.ones(len(self.ids), dtype=bool)

    def move(self, oid: int, delta: np.ndarray) -> None:
        st = self.states[oid]
        st.pos += delta
        self.cent[self._index[oid]] = st.centroid()

    def remove(self, oid: int) -> None:
        self.alive[self._index[oid]] = False
        del self.states[oid]

    def near_point(self, p: np.ndarray, reach: float, above_z: float | None = None):
        """Ids of alive bodies whose bounding circle meets the query circle."""
        d2 = np.sum((self.cent - p) ** 2, axis=1)
        lim = (self.crad + reach) ** 2
        sel = self.alive & (d2 <= lim)
        if above_z is not None:
            sel &= self.height > above_z
        return [self.ids[i] for i in np.nonzero(sel)[0]]

    def near_body(self, oid: int):
        i = self._index[oid]
        d2 = np.sum((self.cent - self.cent[i]) ** 2, axis=1)
        lim = (self.crad + self.crad[i]) ** 2
        sel = self.alive & (d2 <= lim)
        sel[i] = False
        return [self.ids[j] for j in np.nonzero(sel)[0]]


def _rebuild_scene(scene: Scene, bodies: _Bodies) -> Scene:
    objects = []
    for o in scene.objects:
        st = bodies.states.get(o.id)
        if st is None:
            continue
        objects.append(RigidObject(o.id, o.footprint,
                                   (float(st.pos[0]), float(st.pos[1]), o.pose[2]),
                                   o.height, o.color, o.is_target))
    return scene.with_objects(objects)


def _resolve_overlaps(bodies: _Bodies, awake: set, displaced: set) -> None:
    """Pairwise 50/50 separation, propagating outward from moved bodies.

    Overlaps between two untouched bodies are left alone: a stack placed at
    scene construction (occluder over target) stays intact until the sweep
    or another body disturbs it.
    """
    front = set(awake)
    for _ in range(RESOLUTION_ROUNDS):
        if not front:
            return
        pairs = []
        for oid in sorted(front):
            if oid not in bodies.states:
                continue
            for other in bodies.near_body(oid):
                pairs.append((min(oid, other), max(oid, other)))
        front = set()
        for a_id, b_id in sorted(set(pairs)):
            a, b = bodies.states.get(a_id), bodies.states.get(b_id)
            if a is None or b is None:
                continue
            v = geo.mtv(a.shape(), b.shape())
            if v is None:
                continue
            half = 0.5000005 * v  # slack avoids float re-detection
            bodies.move(a_id, -half)
            bodies.move(b_id, half)
            displaced.update((a_id, b_id))
            front.update((a_id, b_id))


def _remove_out_of_bounds(bodies: _Bodies, scene: Scene, oob: list) -> None:
    ext = scene.workspace.extent
    for oid in sorted(bodies.states):
        c = bodies.states[oid].centroid()
        if not (0.0 <= c[0] <= ext and 0.0 <= c[1] <= ext):
            oob.append(oid)
            bodies.remove(oid)


def _tip_displace(bodies: _Bodies, tip_xy: np.ndarray, tip_z: float,
                  displaced: set, awake: set) -> bool:
    tip = geo.WorldDisk(tip_xy, TIP_RADIUS)
    hit = False
    for oid in bodies.near_point(tip_xy, TIP_RADIUS, above_z=tip_z):
        v = geo.mtv(tip, bodies.states[oid].shape())
        if v is None:
            continue
        bodies.move(oid, 1.000001 * v)
        displaced.add(oid)
        awake.add(oid)
        hit = True
    return hit


def _sweep(bodies: _Bodies, dense_paths: list, scene: Scene,
           displaced: set, oob: list, lockstep: bool) -> None:
    def settle(awake):
        _resolve_overlaps(bodies, awake, displaced)
        _remove_out_of_bounds(bodies, scene, oob)

    if not lockstep:
        for dense in dense_paths:
            for p in dense:
                awake: set = set()
                if _tip_displace(bodies, p[:2], p[2], displaced, awake):
                    settle(awake)
        return
    a, b = dense_paths
    ia, ib = 0, 0
    while ia < len(a) or ib < len(b):
        awake: set = set()
        if ia < len(a):
            _tip_displace(bodies, a[ia][:2], a[ia][2], displaced, awake)
            ia += 1
        if ib < len(b):
            # second path defers while the first is active and too close
            pos_a = a[min(ia, len(a)) - 1][:2]
            if ia >= len(a) or np.linalg.norm(pos_a - b[ib][:2]) >= STAGGER_DISTANCE:
                _tip_displace(bodies, b[ib][:2], b[ib][2], displaced, awake)
                ib += 1
        if awake:
            settle(awake)


def execute_push(scene: Scene, paths) -> tuple[Scene, PushOutcome]:
    """Sweep one or two fingertip paths through the scene.

    Two paths on distinct arms run in lockstep as a single dual-arm motion;
    two paths on the same arm run sequentially and count one motion each.
    """
    paths = list(paths)
    if not 1 <= len(paths) <= 2:
        raise InvalidPathError("expected one or two push paths")
    for p in paths:
        _check_path_geometry(p, scene)
    dual = len(paths) == 2 and paths[0].arm != paths[1].arm
    bodies = _Bodies(scene)
    displaced: set = set()
    oob: list = []
    dense = [_densify(p) for p in paths]
    _sweep(bodies, dense, scene, displaced, oob, lockstep=dual)
    motion_count = 1 if (dual or len(paths) == 1) else len(paths)
    outcome = PushOutcome(executed=True,
                          displaced_ids=tuple(sorted(displaced)),
                          out_of_bounds_ids=tuple(sorted(oob)),
                          motion_count=motion_count)
    return _rebuild_scene(scene, bodies), outcome


# ---------------------------------------------------------------------------
# Grasping

def _closing_axis_2d(orientation: GripperOrientation) -> np.ndarray:
    c = orientation.rotation[:2, 0]
    n = np.linalg.norm(c)
    if n < 1e-9:
        return np.array([1.0, 0.0])
    return c / n


def _finger_shapes(pose: GraspPose, obstacle_height: float) -> list:
    """Swept finger rectangles at max opening, elongated by the tilted descent."""
    t2d = pose.translation[:2]
    c = _closing_axis_2d(pose.orientation)
    p = np.array([-c[1], c[0]])
    tilt = tilt_from_vertical(pose.orientation.approach)
    a_h = pose.orientation.approach[:2]
    n = np.linalg.norm(a_h)
    sweep = math.tan(tilt) * obstacle_height
    back = -(a_h / n) * sweep if (n > 1e-9 and sweep > 1e-9) else None
    shapes = []
    for side in (-1.0, 1.0):
        center = t2d + side * (pose.max_opening / 2.0) * c
        corners = [center + sc * (FINGER_THICKNESS / 2) * c + sp * (FINGER_WIDTH / 2) * p
                   for sc in (-1, 1) for sp in (-1, 1)]
        if back is not None:
            corners += [q + back for q in corners]
        shapes.append(geo.WorldPoly(geo.convex_hull(corners)))
    return shapes


def execute_grasp(scene: Scene, pose: GraspPose) -> tuple[Scene, GraspOutcome]:
    """Attempt the grasp; on success the target leaves the scene.

    Failure clauses: (reach) pose outside workspace or both arms' reach;
    (a) closing segment misses the target; (b) target chord at the grasp
    point wider than the opening minus margin; (c) a finger sweep hits a
    non-target object; (d) grasp point above the target top. Failed
    descents disturb whatever the fingers touched.
    """
    tilt = tilt_from_vertical(pose.orientation.approach)
    if tilt > TILT_CAP + 1e-9:
        raise ValueError(f"approach tilt {math.degrees(tilt):.1f} deg exceeds the 45 deg cap")
    target = scene.target
    if target is None:
        return scene, GraspOutcome(attempted=True, success=False, failure="no-target")

    t2d = pose.translation[:2]
    if not (check_reachable(pose.translation, LEFT, scene)
            or check_reachable(pose.translation, RIGHT, scene)):
        return scene, GraspOutcome(attempted=True, success=False, failure="unreachable")

    c = _closing_axis_2d(pose.orientation)
    half = pose.max_opening / 2.0
    tgt_shape = target.shape()

    ok = True
    failure = ""
    if not geo.segment_hits(tgt_shape, t2d - half * c, t2d + half * c):
        ok, failure = False, "closing-segment-miss"
    if ok:
        chord = geo.line_chord(tgt_shape, t2d, c)
        width = (chord[1] - chord[0]) if chord else math.inf
        if width > pose.max_opening - GRASP_WIDTH_MARGIN:
            ok, failure = False, "too-wide"
    grasp_z = float(pose.translation[2])
    blockers = []
    for obj in scene.objects:
        if obj.id == target.id or obj.height <= grasp_z:
            continue
        shape = obj.shape()
        for finger in _finger_shapes(pose, obj.height):
            if geo.mtv(finger, shape) is not None:
                blockers.append(obj.id)
                break
    if ok and blockers:
        ok, failure = False, "finger-collision"
    if ok and grasp_z > target.height + 1e-12:
        ok, failure = False, "above-target"

    if ok:
        remaining = [o for o in scene.objects if o.id != target.id]
        return scene.with_objects(remaining), GraspOutcome(
            attempted=True, success=True, grasped_ids=(target.id,))

    # failed descent: nudge whatever the fingers touched, then re-settle
    bodies = _Bodies(scene)
    displaced: set = set()
    for oid in sorted(bodies.states):
        st = bodies.states[oid]
        if st.obj.height <= grasp_z:
            continue
        for finger in _finger_shapes(pose, st.obj.height):
            v = geo.mtv(finger, st.shape())
            if v is not None:
                bodies.move(oid, 1.000001 * v)
                displaced.add(oid)
    if displaced:
        _resolve_overlaps(bodies, set(displaced), displaced)
        oob: list = []
        _remove_out_of_bounds(bodies, scene, oob)
        scene = _rebuild_scene(scene, bodies)
    return scene, GraspOutcome(attempted=True, success=False, failure=failure)
