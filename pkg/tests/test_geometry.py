import numpy as np
import pytest

from reference import rigid_transform_homogeneous
from voxtrack.errors import ConfigurationError, DataError
from voxtrack.geometry import (Camera, DepthImage, load_calibration,
                               look_at_camera, nearest_pixel, project,
                               project_points, save_calibration, unproject)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_identity_camera_on_axis(identity_camera):
    pixel, depth, in_fov = project((0.0, 0.0, 2.0), identity_camera)
    assert np.allclose(pixel, (0.0, 0.0))
    assert depth == 2.0
    assert in_fov  # (0, 0) is a valid pixel of the 9x9 image


def test_point_behind_camera_is_out_of_view(identity_camera):
    _, depth, in_fov = project((0.3, -0.1, -1.5), identity_camera)
    assert depth < 0
    assert not in_fov


def test_no_division_at_tiny_depth(identity_camera):
    pixel, depth, in_fov = project((5.0, 5.0, 1e-13), identity_camera)
    assert not in_fov
    assert np.all(np.isfinite(pixel))


def test_depth_matches_homogeneous_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        rot = random_rotation(rng)
        t = rng.normal(size=3)
        cam = Camera("r", np.diag([200.0, 220.0, 1.0]), rot, t, 64, 48, 0.1, 50.0)
        p = rng.normal(scale=3.0, size=3)
        _, depth, _ = project(p, cam)
        oracle = rigid_transform_homogeneous(p, rot, t)
        assert abs(depth - oracle[2]) < 1e-9


def test_projection_representation_invariance():
    # full 4-vector homogeneous product vs R @ p + t
    rng = np.random.default_rng(8)
    k = np.array([[150.0, 0, 32.0], [0, 150.0, 24.0], [0, 0, 1.0]])
    for _ in range(50):
        rot = random_rotation(rng)
        t = rng.normal(size=3)
        cam = Camera("r", k, rot, t, 64, 48, 0.1, 50.0)
        p = rng.normal(scale=2.0, size=3)
        pixel, depth, _ = project(p, cam)
        p_cam = rigid_transform_homogeneous(p, rot, t)
        if p_cam[2] > 1e-6:
            hom = k @ p_cam
            assert np.allclose(pixel, hom[:2] / hom[2], atol=1e-9)


def test_project_points_matches_scalar(identity_camera):
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 3, size=(30, 3))
    uv, z = project_points(pts, identity_camera)
    for i, p in enumerate(pts):
        pixel, depth, _ = project(p, identity_camera)
        assert abs(z[i] - depth) < 1e-12
        if depth > 1e-9:
            assert np.allclose(uv[i], pixel)


def test_nearest_pixel_rounding():
    assert nearest_pixel((3.4, 7.6)) == (3, 8)
    assert nearest_pixel((-0.4, 0.4)) == (0, 0)
    assert nearest_pixel((-0.6, 0.0)) == (-1, 0)


def test_camera_invariants_enforced():
    bad_r = np.eye(3) * 1.1
    with pytest.raises(ConfigurationError):
        Camera("bad", np.eye(3), bad_r, np.zeros(3), 4, 4, 0.1, 2.0)
    with pytest.raises(ConfigurationError):
        Camera("bad", np.eye(3), np.eye(3), np.zeros(3), 0, 4, 0.1, 2.0)
    with pytest.raises(ConfigurationError):
        Camera("bad", np.eye(3), np.eye(3), np.zeros(3), 4, 4, 2.0, 1.0)


def test_depth_image_invariants():
    DepthImage(np.zeros((4, 6), np.float32))
    with pytest.raises(DataError):
        DepthImage(np.full((2, 2), np.nan, np.float32))
    with pytest.raises(DataError):
        DepthImage(np.full((2, 2), -1.0, np.float32))


def test_calibration_round_trip(tmp_path, rig):
    path = tmp_path / "calib.json"
    save_calibration(path, rig)
    loaded = load_calibration(path)
    assert len(loaded) == len(rig)
    for a, b in zip(rig, loaded):
        assert a.name == b.name
        assert np.allclose(a.intrinsics, b.intrinsics)
        assert np.allclose(a.rotation, b.rotation)
        assert np.allclose(a.translation, b.translation)
        assert (a.width, a.height, a.min_depth, a.max_depth) == \
            (b.width, b.height, b.min_depth, b.max_depth)


def test_calibration_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_calibration(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\"cameras\": [{\"name\": \"x\"}]}")
    with pytest.raises(ConfigurationError):
        load_calibration(bad)


def test_look_at_camera_centers_target(rig):
    cam = rig[0]
    target = np.array([10.1 / 2, 10.1 / 2, 0.9])
    pixel, depth, in_fov = project(target, cam)
    assert in_fov and depth > 0
    assert np.allclose(pixel, (cam.width / 2 - 0.5, cam.height / 2 - 0.5), atol=1.0)


def test_unproject_round_trip(identity_camera):
    samples = np.zeros((9, 9), np.float32)
    samples[4, 6] = 2.5
    samples[0, 0] = 1.0
    cloud = unproject(DepthImage(samples), identity_camera)
    assert cloud.shape == (2, 3)
    for point in cloud:
        pixel, depth, _ = project(point, identity_camera)
        px, py = nearest_pixel(pixel)
        assert abs(samples[py, px] - depth) < 1e-6
