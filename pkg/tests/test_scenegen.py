import math

import numpy as np
import pytest

from mtgcd import geometry
from mtgcd.errors import GenerationError
from mtgcd.scenegen import (BuildingSpec, CameraSpec, SceneSpec, load_pair, make_pair, project_building,
                            random_scene, render_scene, save_pair)

from conftest import one_building_scene, rect

# h * tan(tilt) * (sin az, cos az) for h=15, tilt=0.5, az=0.3, evaluated by a standalone scalar script
D_15_05_03 = (2.4216513704736196, 7.828540539719157)


def test_nadir_projection_is_identity():
    b = BuildingSpec(1, rect(30, 30, 10, 10), 25.0)
    r = project_building(b, CameraSpec(tilt=0.0, azimuth=1.2))
    np.testing.assert_array_equal(r.offset, [0, 0])
    np.testing.assert_array_equal(r.roof, r.footprint)
    assert not r.facade_mask((128, 128)).any()


def test_axis_aligned_projection():
    b = BuildingSpec(1, rect(30, 30, 10, 10), 20.0)
    r = project_building(b, CameraSpec(tilt=math.pi / 4, azimuth=math.pi / 2))
    np.testing.assert_allclose(r.offset, [20, 0], atol=1e-12)
    roof = r.roof_mask((128, 128))
    expect = np.zeros((128, 128), bool)
    expect[30:40, 50:60] = True
    np.testing.assert_array_equal(roof, expect)
    facade = np.zeros((128, 128), bool)
    facade[30:40, 30:50] = True
    np.testing.assert_array_equal(r.facade_mask((128, 128)), facade)
    np.testing.assert_array_equal(r.footprint, b.polygon)


def test_roof_centroid_shift_matches_closed_form():
    b = BuildingSpec(1, rect(40, 40, 20, 14), 15.0)
    r = project_building(b, CameraSpec(tilt=0.5, azimuth=0.3))
    np.testing.assert_allclose(r.offset, D_15_05_03, atol=1e-12)
    shape = (128, 128)

    def pixel_centroid(mask):
        ys, xs = np.nonzero(mask)
        return np.array([xs.mean() + 0.5, ys.mean() + 0.5])

    shift = pixel_centroid(r.roof_mask(shape)) - pixel_centroid(r.footprint_mask(shape))
    assert np.all(np.abs(shift - D_15_05_03) <= 0.5)


def test_projection_leaving_frame_raises():
    b = BuildingSpec(1, rect(110, 30, 10, 10), 30.0)
    with pytest.raises(GenerationError):
        project_building(b, CameraSpec(tilt=0.6, azimuth=math.pi / 2), (128, 128))


@pytest.mark.parametrize("kwargs", [
    dict(footprint=((0, 0), (10, 0), (0, 10), (10, 10))),  # self-intersecting order, not convex
    dict(footprint=rect(0, 0, 1, 1)),
    dict(footprint=rect(0, 0, 5, 5), roof_shade=100, facade_shade=100),
    dict(footprint=rect(0, 0, 5, 5), present_t1=False, present_t2=False),
])
def test_invalid_buildings_rejected(kwargs):
    args = dict(id=1, height=10.0)
    args.update(kwargs)
    with pytest.raises(GenerationError):
        BuildingSpec(**args)


def test_camera_tilt_bounds():
    with pytest.raises(GenerationError):
        CameraSpec(tilt=1.0)


def test_empty_scene_renders_noise_only():
    r = render_scene(SceneSpec(background_noise_seed=3), 1)
    assert not r.roof_ids.any() and not r.facade_ids.any()
    assert r.image.std() > 0
    assert np.abs(r.image.astype(float) - r.image.mean((0, 1))).max() <= 11


def test_single_building_instance_area_within_band():
    foot = ((20.3, 25.1), (47.9, 30.2), (41.0, 52.7), (18.2, 44.4))
    scene = one_building_scene(footprint=foot, d1_cam=CameraSpec(0.4, 2.0))
    r = render_scene(scene, 1)
    roof = project_building(scene.buildings[0], scene.camera_t1).roof
    assert abs((r.roof_ids == 1).sum() - geometry.area(roof)) <= geometry.perimeter(roof)


def test_render_is_deterministic():
    scene = random_scene(np.random.default_rng(5))
    a, b = render_scene(scene, 2), render_scene(scene, 2)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.roof_ids.tobytes() == b.roof_ids.tobytes()


def test_make_pair_deterministic_bytes():
    scene = random_scene(np.random.default_rng(11))
    p, q = make_pair(scene), make_pair(scene)
    for name in ("image_t1", "image_t2", "seg_t1", "seg_t2", "change_mask", "ignore_mask", "bt_valid"):
        assert getattr(p, name).tobytes() == getattr(q, name).tobytes()
    for name in ("st_t1", "st_t2", "bt_flow"):
        assert getattr(p, name).stack().tobytes() == getattr(q, name).stack().tobytes()


def test_unchanged_scene_has_empty_change_mask():
    scene = one_building_scene(d1_cam=CameraSpec(0.3, 0.5), d2_cam=CameraSpec(0.5, 2.0))
    assert not make_pair(scene).change_mask.any()


def test_added_building_change_equals_t2_roof():
    scene = one_building_scene(p1=False, p2=True, d2_cam=CameraSpec(0.5, 2.0))
    pair = make_pair(scene)
    roof2 = project_building(scene.buildings[0], scene.camera_t2).roof_mask((128, 128))
    np.testing.assert_array_equal(pair.change_mask, roof2)


def test_roofs_occlude_facades():
    tall = BuildingSpec(1, rect(20, 40, 12, 12), 30.0, roof_shade=220, facade_shade=90)
    low = BuildingSpec(2, rect(50, 40, 12, 12), 5.0, roof_shade=180, facade_shade=60)
    scene = SceneSpec((128, 128), (tall, low), CameraSpec(0.6, math.pi / 2), CameraSpec(), 1)
    r = render_scene(scene, 1)
    # the tall building's facade sweeps under the low roof; the low roof wins
    low_roof = project_building(low, scene.camera_t1).roof_mask((128, 128))
    assert (r.roof_ids[low_roof] == 2).all()
    assert not (r.facade_ids[low_roof]).any()
    assert (r.image[low_roof] > 160).all()


def test_random_scene_respects_invariants():
    for seed in range(30):
        scene = random_scene(np.random.default_rng(seed))
        assert 1 <= len(scene.buildings) <= 6
        for e in (1, 2):
            roofs = [project_building(b, scene.camera(e), scene.image_size).roof_mask(scene.image_size)
                     for b in scene.buildings if b.present(e)]
            if roofs:
                assert np.sum(roofs, axis=0).max() <= 1
        for b in scene.buildings:
            assert b.facade_shade < b.roof_shade


def test_convex_footprints():
    from mtgcd.scenegen import SceneParams

    scene = random_scene(np.random.default_rng(2), SceneParams(shape="convex"))
    assert scene.buildings
    assert all(geometry.is_convex(b.polygon) for b in scene.buildings)


def test_scene_dict_round_trip():
    scene = random_scene(np.random.default_rng(4))
    assert SceneSpec.from_dict(scene.to_dict()) == scene


def test_pair_file_round_trip(tmp_path):
    scene = random_scene(np.random.default_rng(21))
    pair = make_pair(scene)
    save_pair(pair, tmp_path / "p")
    names = {p.name for p in (tmp_path / "p").iterdir()}
    assert {"img_t1.png", "img_t2.png", "seg_t1.png", "seg_t2.png", "change.png",
            "st_t1.f32", "st_t2.f32", "bt.f32", "meta.json"} <= names
    raw = np.fromfile(tmp_path / "p" / "st_t1.f32", dtype="<f4").reshape(128, 128, 2)
    np.testing.assert_array_equal(raw[..., 0], pair.st_t1.vx)
    back = load_pair(tmp_path / "p")
    np.testing.assert_array_equal(back.image_t1, pair.image_t1)
    np.testing.assert_array_equal(back.seg_t1, pair.seg_t1)
    np.testing.assert_array_equal(back.seg_t2[~pair.ignore_mask], pair.seg_t2[~pair.ignore_mask])
    np.testing.assert_array_equal(back.ignore_mask, pair.ignore_mask)
    np.testing.assert_array_equal(back.change_mask, pair.change_mask)
    np.testing.assert_array_equal(back.bt_flow.stack(), pair.bt_flow.stack())
    assert back.scene == scene


def test_load_pair_reports_path(tmp_path):
    with pytest.raises(OSError, match=str(tmp_path)):
        load_pair(tmp_path)
