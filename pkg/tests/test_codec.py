import math

import numpy as np
import pytest

from pushgrasp import codec, world

from conftest import disk_obj, make_scene, rect_obj


def test_single_view_is_pole():
    v = codec.sample_views(1)
    assert np.allclose(v, [[0.0, 0.0, -1.0]])


def test_views_unit_norm_downward_with_floor(oset):
    v = oset.views
    assert len(v) == 60
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-9)
    assert (v[:, 2] < 0).all()
    floor = math.sin(math.radians(codec.ELEVATION_FLOOR_DEG))
    assert np.all(v[:, 2] <= -floor + 1e-12)
    assert np.allclose(v[0], [0.0, 0.0, -1.0])


def test_views_min_pairwise_angle(oset):
    v = oset.views
    dots = np.clip(v @ v.T, -1.0, 1.0)
    np.fill_diagonal(dots, -1.0)
    min_angle = math.degrees(math.acos(float(dots.max())))
    assert min_angle > 10.0


def test_views_pairwise_distinct(oset):
    v = oset.views
    d = np.linalg.norm(v[:, None] - v[None, :], axis=-1)
    np.fill_diagonal(d, 1.0)
    assert d.min() > 1e-6


def test_angles_exact(oset):
    assert np.array_equal(oset.angles, np.arange(6) * (math.pi / 6))


def test_encode_decode_examples(oset):
    assert codec.encode(0, 0, oset) == 0
    assert codec.encode(59, 5, oset) == 359
    assert codec.decode(7, oset) == (1, 1)


def test_encode_decode_bijection(oset):
    seen = set()
    for view in range(60):
        for angle in range(6):
            value = codec.encode(view, angle, oset)
            assert codec.decode(value, oset) == (view, angle)
            seen.add(value)
    assert seen == set(range(360))


def test_encode_rejects_out_of_range(oset):
    with pytest.raises(ValueError):
        codec.encode(60, 0, oset)
    with pytest.raises(ValueError):
        codec.encode(0, 6, oset)
    with pytest.raises(ValueError):
        codec.decode(360, oset)


def test_rotation_canonical_frame(oset):
    g = codec.orientation_to_rotation(0, oset)
    assert np.allclose(g.approach, [0, 0, -1])
    assert np.allclose(g.rotation[:, 0], [1, 0, 0], atol=1e-12)


def test_rotation_in_plane_quarter_turn(oset):
    g = codec.orientation_to_rotation(3, oset)  # view 0, angle 3 -> 90 deg
    closing = g.rotation[:, 0]
    assert abs(abs(closing[1]) - 1.0) < 1e-9
    assert abs(closing[0]) < 1e-9


def test_all_rotations_orthonormal(oset):
    for idx in range(360):
        g = codec.orientation_to_rotation(idx, oset)
        err = np.abs(g.rotation.T @ g.rotation - np.eye(3)).max()
        assert err < 1e-9
        assert np.linalg.det(g.rotation) == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(g.rotation[:, 2], g.approach)


def test_surrogate_empty_scene_view0_all_ones(oset, ws):
    sc = make_scene([disk_obj(0, 5.0, 5.0, target=True)])  # nothing on the grid
    obs = world.render_observation(sc)
    avh = codec.surrogate_avh(obs, oset, ws)
    assert avh.shape == (360, 56, 56)
    assert np.allclose(avh[0:6], 1.0)
    assert avh.min() >= 0.0 and avh.max() <= 1.0


def test_surrogate_inside_large_block_zero(oset, ws):
    # broad flat block: finger lines fully inside -> zero clearance
    sc = make_scene([rect_obj(0, 0.5, 0.5, 0.4, 0.4, h=0.04, target=True)])
    obs = world.render_observation(sc)
    avh = codec.surrogate_avh(obs, oset, ws)
    assert np.allclose(avh[:, 28, 28], 0.0)


def test_surrogate_isolated_disk_prefers_straight_down(oset, ws):
    sc = make_scene([disk_obj(0, 0.5, 0.5, r=0.02, h=0.03, target=True)])
    obs = world.render_observation(sc)
    avh = codec.surrogate_avh(obs, oset, ws)
    cell = avh[:, 28, 28].reshape(60, 6)
    down = cell[0].max()
    assert down > 0.5
    # steepest views point away from the flat top normal: strictly worse
    steep = np.argmin(-oset.views[:, 2])
    assert down > cell[steep].max()


def test_surrogate_deterministic_and_translation_consistent(oset, ws):
    objs = [disk_obj(0, 0.45, 0.52, r=0.03, h=0.03, target=True),
            rect_obj(1, 0.6, 0.4, 0.06, 0.04, yaw=0.7)]
    obs = world.render_observation(make_scene(objs))
    a = codec.surrogate_avh(obs, oset, ws)
    b = codec.surrogate_avh(obs, oset, ws)
    assert np.array_equal(a, b)
    shift = 4 * ws.pixel_pitch
    moved = [world.RigidObject(o.id, o.footprint, (o.pose[0] + shift, o.pose[1], o.pose[2]),
                               o.height, o.color, o.is_target) for o in objs]
    c = codec.surrogate_avh(world.render_observation(make_scene(moved)), oset, ws)
    assert np.allclose(a[:, 10:46, 10:40], c[:, 10:46, 11:41])


def test_surrogate_finite_on_benchmark_scene(oset):
    from pushgrasp import bench
    sc = bench.generate_scenario(bench.ScenarioSpec(case=1, seed=11))
    avh = codec.surrogate_avh(world.render_observation(sc), oset, sc.workspace)
    assert np.isfinite(avh).all()
    assert avh.min() >= 0.0 and avh.max() <= 1.0


def test_tilt_from_vertical():
    assert codec.tilt_from_vertical(np.array([0, 0, -1.0])) == pytest.approx(0.0)
    v = np.array([math.sin(0.5), 0.0, -math.cos(0.5)])
    assert codec.tilt_from_vertical(v) == pytest.approx(0.5)
