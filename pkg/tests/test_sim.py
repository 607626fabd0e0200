import math

import numpy as np
import pytest

from pushgrasp import geometry as geo
from pushgrasp import sim, world
from pushgrasp.codec import default_orientation_set, orientation_to_rotation

from conftest import disk_obj, make_scene, rect_obj

OSET = default_orientation_set()
DOWN = orientation_to_rotation(0, OSET)


def straight_path(p0, p1, arm=sim.RIGHT, z=0.01, n=None):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = n or max(2, int(np.ceil(np.linalg.norm(p1 - p0) / 0.02)) + 1)
    pts = np.linspace(p0, p1, n)
    wp = np.column_stack([pts, np.full(len(pts), z)])
    return sim.PushPath(waypoints=wp, arm=arm)


# ---------------------------------------------------------------------------
# independent oracle: 1 mm tip stepping with per-pixel shape queries

def oracle_push_disk(scene, path_xy, tip_z=0.01, step=0.001):
    """Reference sweep for scenes of disks only, 1 mm steps, direct math."""
    pos = {o.id: np.array(o.pose[:2]) for o in scene.objects}
    radii = {o.id: o.footprint.radius for o in scene.objects}
    heights = {o.id: o.height for o in scene.objects}
    removed = set()
    p0, p1 = np.asarray(path_xy[0]), np.asarray(path_xy[1])
    n = int(np.ceil(np.linalg.norm(p1 - p0) / step))
    for k in range(n + 1):
        tip = p0 + (p1 - p0) * (k / max(1, n))
        for oid in sorted(pos):
            if oid in removed or heights[oid] <= tip_z:
                continue
            d = pos[oid] - tip
            dist = np.linalg.norm(d)
            overlap = sim.TIP_RADIUS + radii[oid] - dist
            if overlap > 0:
                pos[oid] = pos[oid] + d / dist * overlap * 1.000001
        # pairwise separation
        for _ in range(32):
            moved = False
            ids = [i for i in sorted(pos) if i not in removed]
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    a, b = ids[i], ids[j]
                    d = pos[b] - pos[a]
                    dist = np.linalg.norm(d)
                    overlap = radii[a] + radii[b] - dist
                    if overlap > 0:
                        shift = d / dist * overlap * 0.5000005
                        pos[a] = pos[a] - shift
                        pos[b] = pos[b] + shift
                        moved = True
            if not moved:
                break
        for oid in sorted(pos):
            if oid in removed:
                continue
            c = pos[oid]
            if not (0 <= c[0] <= 1 and 0 <= c[1] <= 1):
                removed.add(oid)
    return pos, removed


def test_push_through_free_disk_matches_oracle():
    sc = make_scene([disk_obj(0, 0.5, 0.5, r=0.03, h=0.03, target=True)])
    path = straight_path((0.42, 0.5), (0.55, 0.5))
    new_scene, out = sim.execute_push(sc, [path])
    assert out.executed and out.displaced_ids == (0,)
    assert out.motion_count == 1
    oracle_pos, oracle_removed = oracle_push_disk(sc, [(0.42, 0.5), (0.55, 0.5)])
    got = np.array(new_scene.objects[0].pose[:2])
    assert np.linalg.norm(got - oracle_pos[0]) < 0.005
    # pushed at least the penetration distance along +x
    assert got[0] - 0.5 >= 0.55 + sim.TIP_RADIUS + 0.03 - 0.5 - 1e-6


def test_push_touching_nothing_is_identity():
    sc = make_scene([disk_obj(0, 0.3, 0.3, target=True), disk_obj(1, 0.7, 0.7)])
    path = straight_path((0.5, 0.45), (0.5, 0.55))
    new_scene, out = sim.execute_push(sc, [path])
    assert out.displaced_ids == ()
    assert out.out_of_bounds_ids == ()
    for a, b in zip(sc.objects, new_scene.objects):
        assert a.pose == b.pose


def test_push_out_of_bounds_removal():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True),
                     disk_obj(1, 0.04, 0.5, r=0.03)])
    path = straight_path((0.12, 0.5), (0.02, 0.5))
    new_scene, out = sim.execute_push(sc, [path])
    assert 1 in out.out_of_bounds_ids
    assert set(out.out_of_bounds_ids) <= set(out.displaced_ids)
    assert new_scene.object_by_id(1) is None
    assert new_scene.object_by_id(0) is not None


def test_push_chain_matches_oracle_on_random_disk_scenes():
    rng = np.random.default_rng(7)
    for trial in range(12):
        objs = []
        for oid in range(4):
            x, y = rng.uniform(0.35, 0.65, 2)
            objs.append(disk_obj(oid, x, y, r=float(rng.uniform(0.02, 0.04)),
                                 h=0.03, target=oid == 0))
        # drop overlapping starts
        ok = all(geo.mtv(a.shape(), b.shape()) is None
                 for i, a in enumerate(objs) for b in objs[i + 1:])
        if not ok:
            continue
        start = np.array([rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)])
        end = start + rng.uniform(-0.15, 0.15, 2)
        end = np.clip(end, 0.05, 0.95)
        sc = make_scene(objs)
        new_scene, _ = sim.execute_push(sc, [straight_path(start, end)])
        oracle_pos, oracle_removed = oracle_push_disk(sc, [start, end])
        for o in objs:
            if o.id in oracle_removed:
                assert new_scene.object_by_id(o.id) is None
            else:
                got = new_scene.object_by_id(o.id)
                assert got is not None
                assert np.linalg.norm(np.array(got.pose[:2]) - oracle_pos[o.id]) < 0.005


def test_post_resolution_overlap_bound():
    rng = np.random.default_rng(3)
    checked = 0
    for trial in range(20):
        objs = [disk_obj(0, 0.5, 0.5, r=0.035, target=True)]
        for oid in range(1, 5):
            a = rng.uniform(0, 2 * math.pi)
            d = rng.uniform(0.08, 0.16)
            objs.append(rect_obj(oid, 0.5 + d * math.cos(a), 0.5 + d * math.sin(a),
                                 0.05, 0.04, yaw=float(rng.uniform(0, 3))))
        if any(geo.mtv(a.shape(), b.shape()) is not None
               for i, a in enumerate(objs) for b in objs[i + 1:]):
            continue  # the bound applies to scenes that start overlap-free
        sc = make_scene(objs)
        path = straight_path((0.35, 0.5), (0.62, 0.5))
        new_scene, _ = sim.execute_push(sc, [path])
        for i, a in enumerate(new_scene.objects):
            for b in new_scene.objects[i + 1:]:
                assert geo.penetration_depth(a.shape(), b.shape()) <= 0.0005
        checked += 1
    assert checked >= 5


def test_push_determinism():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True),
                     rect_obj(1, 0.56, 0.5, 0.05, 0.04, yaw=0.3)])
    path = straight_path((0.4, 0.5), (0.6, 0.5))
    a, oa = sim.execute_push(sc, [path])
    b, ob = sim.execute_push(sc, [path])
    assert oa == ob
    for x, y in zip(a.objects, b.objects):
        assert x.pose == y.pose


def test_conservation_no_objects_created():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True), disk_obj(1, 0.55, 0.5)])
    new_scene, out = sim.execute_push(sc, [straight_path((0.4, 0.5), (0.6, 0.5))])
    assert {o.id for o in new_scene.objects} | set(out.out_of_bounds_ids) == {0, 1}


def test_invalid_path_rejected():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True)])
    with pytest.raises(sim.InvalidPathError):
        bad = sim.PushPath(waypoints=np.array([[0.1, 0.1, 0.01], [1.4, 0.1, 0.01]]))
        sim.execute_push(sc, [bad])
    with pytest.raises(sim.InvalidPathError):
        bad = sim.PushPath(waypoints=np.array([[0.1, 0.1, 0.3], [0.2, 0.1, 0.3]]))
        sim.execute_push(sc, [bad])
    with pytest.raises(sim.InvalidPathError):
        # waypoints spaced wider than 0.05 m
        bad = sim.PushPath(waypoints=np.array([[0.1, 0.1, 0.01], [0.3, 0.1, 0.01]]))
        sim.execute_push(sc, [bad])


def test_single_arm_two_paths_match_dual_when_separated():
    objs = [disk_obj(0, 0.3, 0.25, target=True), disk_obj(1, 0.7, 0.75)]
    sc = make_scene(objs)
    left = straight_path((0.22, 0.25), (0.38, 0.25), arm=sim.LEFT)
    right = straight_path((0.62, 0.75), (0.78, 0.75), arm=sim.RIGHT)
    dual_scene, dual_out = sim.execute_push(sc, [left, right])
    seq_scene, seq_out = sim.execute_push(
        sc, [sim.PushPath(left.waypoints, sim.RIGHT), right])
    assert dual_out.motion_count == 1
    assert seq_out.motion_count == 2
    for a, b in zip(dual_scene.objects, seq_scene.objects):
        assert a.pose == b.pose


def test_dual_stagger_defers_second_path():
    # paths cross near each other; the stagger rule must keep tips apart
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True)])
    a = straight_path((0.40, 0.47), (0.60, 0.47), arm=sim.LEFT)
    b = straight_path((0.40, 0.53), (0.60, 0.53), arm=sim.RIGHT)
    new_scene, out = sim.execute_push(sc, [a, b])
    assert out.executed
    assert out.motion_count == 1


# ---------------------------------------------------------------------------
# grasping

def grasp_at(x, y, z=0.02, idx=0):
    return sim.GraspPose(translation=np.array([x, y, z]),
                         orientation=orientation_to_rotation(idx, OSET))


def test_grasp_isolated_disk_succeeds():
    sc = make_scene([disk_obj(0, 0.5, 0.5, r=0.03, h=0.03, target=True)])
    new_scene, out = sim.execute_grasp(sc, grasp_at(0.5, 0.5, 0.025))
    assert out.attempted and out.success
    assert out.grasped_ids == (0,)
    assert new_scene.target is None


def test_grasp_flanked_disk_fails_finger_collision():
    # neighbors right where the fingers land (+-0.07 along closing axis x)
    sc = make_scene([
        disk_obj(0, 0.5, 0.5, r=0.03, h=0.03, target=True),
        disk_obj(1, 0.5 - 0.07, 0.5, r=0.028, h=0.03),
        disk_obj(2, 0.5 + 0.07, 0.5, r=0.028, h=0.03),
    ])
    new_scene, out = sim.execute_grasp(sc, grasp_at(0.5, 0.5, 0.025))
    assert out.attempted and not out.success
    assert out.failure == "finger-collision"
    # the failed descent disturbed the blockers
    moved = [new_scene.object_by_id(i) for i in (1, 2)]
    assert any(abs(m.pose[0] - o) > 1e-6 for m, o in zip(moved, (0.43, 0.57)))


def test_grasp_empty_cell_fails_segment_miss():
    sc = make_scene([disk_obj(0, 0.3, 0.3, r=0.03, h=0.03, target=True)])
    _, out = sim.execute_grasp(sc, grasp_at(0.7, 0.7, 0.01))
    assert out.attempted and not out.success
    assert out.failure == "closing-segment-miss"


def test_grasp_too_wide_fails():
    sc = make_scene([rect_obj(0, 0.5, 0.5, 0.2, 0.05, h=0.03, target=True)])
    # closing along x meets the 0.2 m chord
    _, out = sim.execute_grasp(sc, grasp_at(0.5, 0.5, 0.02))
    assert not out.success
    assert out.failure == "too-wide"


def test_grasp_above_target_fails():
    sc = make_scene([disk_obj(0, 0.5, 0.5, r=0.03, h=0.02, target=True)])
    _, out = sim.execute_grasp(sc, grasp_at(0.5, 0.5, 0.05))
    assert not out.success
    assert out.failure == "above-target"


def test_grasp_unreachable_counts_as_attempt():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True)])
    pose = sim.GraspPose(translation=np.array([1.5, 0.5, 0.02]),
                         orientation=DOWN)
    new_scene, out = sim.execute_grasp(sc, pose)
    assert out.attempted and not out.success
    assert out.failure == "unreachable"
    assert new_scene is sc  # untouched


def test_grasp_tilt_cap_enforced():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True)])
    steep = codec_steep_orientation()
    with pytest.raises(ValueError):
        sim.execute_grasp(sc, sim.GraspPose(np.array([0.5, 0.5, 0.02]), steep))


def codec_steep_orientation():
    from pushgrasp.codec import GripperOrientation
    a = np.array([math.sin(1.0), 0.0, -math.cos(1.0)])  # 57 deg tilt
    c = np.array([math.cos(1.0), 0.0, math.sin(1.0)])
    return GripperOrientation(approach=a, in_plane=0.0,
                              rotation=np.stack([c, np.cross(a, c), a], axis=1))


def test_grasp_clause_oracle_randomized():
    """Clause outcomes vs a per-pixel 1 mm raster oracle on random scenes."""
    rng = np.random.default_rng(11)
    agree = 0
    for trial in range(50):
        objs = [disk_obj(0, float(rng.uniform(0.4, 0.6)), float(rng.uniform(0.4, 0.6)),
                         r=float(rng.uniform(0.02, 0.045)), h=0.03, target=True)]
        for oid in range(1, 4):
            objs.append(disk_obj(oid, float(rng.uniform(0.35, 0.65)),
                                 float(rng.uniform(0.35, 0.65)),
                                 r=float(rng.uniform(0.02, 0.04)), h=0.03))
        sc = make_scene(objs)
        tx, ty = objs[0].pose[:2]
        pose = grasp_at(tx, ty, 0.02, idx=int(rng.integers(6)))  # view 0 angles
        _, out = sim.execute_grasp(sc, pose)
        expected = oracle_grasp_clauses(sc, pose)
        assert out.success == expected, f"trial {trial}: sim {out.success} oracle {expected}"
        agree += 1
    assert agree == 50


def oracle_grasp_clauses(scene, pose, res=0.001):
    """Straight-down grasp oracle for disk scenes on a 1 mm raster."""
    target = scene.target
    t2d = pose.translation[:2]
    c = pose.orientation.rotation[:2, 0]
    c = c / np.linalg.norm(c)
    half = pose.max_opening / 2
    # (a) closing segment meets target: sample every mm
    ts = target.shape()
    hits = any(geo.point_inside(ts, t2d + s * c)
               for s in np.arange(-half, half + 1e-12, res))
    if not hits:
        return False
    # (b) chord along closing line through the grasp point
    inside = [s for s in np.arange(-0.2, 0.2, res) if geo.point_inside(ts, t2d + s * c)]
    width = (max(inside) - min(inside)) if inside else 0.0
    if width > pose.max_opening - 0.004 - res:
        return False
    # (c) finger rectangles sampled at 1 mm vs non-target objects
    p = np.array([-c[1], c[0]])
    for side in (-1, 1):
        center = t2d + side * half * c
        for u in np.arange(-0.005, 0.005 + 1e-12, res):
            for v in np.arange(-0.01, 0.01 + 1e-12, res):
                q = center + u * c + v * p
                for o in scene.objects:
                    if o.id == target.id or o.height <= pose.translation[2]:
                        continue
                    if geo.point_inside(o.shape(), q):
                        return False
    # (d)
    return pose.translation[2] <= target.height


def test_check_reachable():
    sc = make_scene([disk_obj(0, 0.5, 0.5, target=True)])
    assert sim.check_reachable((0.5, 0.5, 0.0), sim.LEFT, sc)
    assert sim.check_reachable((0.5, 0.5, 0.0), sim.RIGHT, sc)
    # far corner from the left base is out of reach
    assert math.hypot(1.0 - (-0.15), 1.0 - 0.5) > sim.REACH_RADIUS
    assert not sim.check_reachable((1.0, 1.0, 0.0), sim.LEFT, sc)
    assert not sim.check_reachable((1.2, 0.5, 0.0), sim.RIGHT, sc)


def test_grasp_determinism():
    sc = make_scene([
        disk_obj(0, 0.5, 0.5, r=0.03, h=0.03, target=True),
        disk_obj(1, 0.44, 0.5, r=0.028, h=0.03),
    ])
    a, oa = sim.execute_grasp(sc, grasp_at(0.5, 0.5, 0.025))
    b, ob = sim.execute_grasp(sc, grasp_at(0.5, 0.5, 0.025))
    assert oa == ob
    for x, y in zip(a.objects, b.objects):
        assert x.pose == y.pose
