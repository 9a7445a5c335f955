import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semvox.errors import ConfigError, DegenerateIntrinsicsError, DimensionMismatchError, InvalidDepthError
from semvox.geometry import (
    CameraIntrinsics,
    PoseSE3,
    backproject_frame,
    backproject_pixel,
    intrinsics_matrix,
    invert_intrinsics,
)

from conftest import random_intrinsics, random_pose


def per_pixel_oracle(K, pose, depth, max_range=50.0, stride=1):
    """Straight per-pixel evaluation with a generic matrix inverse."""
    Kinv = np.linalg.inv(intrinsics_matrix(K))
    T = pose.matrix()
    out = []
    for v in range(0, K.height, stride):
        for u in range(0, K.width, stride):
            z = depth[v, u]
            if not (np.isfinite(z) and 0 < z <= max_range):
                continue
            out.append((z * (T @ Kinv @ np.array([u, v, 1.0, 1.0 / z])))[:3])
    return np.array(out).reshape(-1, 3)


def unit_camera(width=4, height=4):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return CameraIntrinsics(1.0, 1.0, 0.0, 0.0, width, height)


def test_unit_camera_matrices_are_identity():
    K = unit_camera()
    np.testing.assert_array_equal(intrinsics_matrix(K), np.eye(4))
    np.testing.assert_array_equal(invert_intrinsics(K), np.eye(4))


def test_intrinsics_matrix_layout():
    K = CameraIntrinsics(320, 320, 320, 240, 640, 480)
    expected = np.array([[320, 0, 320, 0], [0, 320, 240, 0], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    np.testing.assert_array_equal(intrinsics_matrix(K), expected)


def test_inverse_hand_expanded_zero_skew():
    K = CameraIntrinsics(320, 240, 160, 120, 320, 240)
    inv = invert_intrinsics(K)
    np.testing.assert_allclose(inv[0], [1 / 320, 0, -160 / 320, 0], atol=1e-15)
    np.testing.assert_allclose(inv[1], [0, 1 / 240, -120 / 240, 0], atol=1e-15)
    np.testing.assert_array_equal(inv[2:], np.eye(4)[2:])


def test_inverse_matches_numeric_inverse(rng):
    for _ in range(200):
        K = random_intrinsics(rng)
        np.testing.assert_allclose(invert_intrinsics(K), np.linalg.inv(intrinsics_matrix(K)), rtol=0, atol=1e-12)
        np.testing.assert_allclose(intrinsics_matrix(K) @ invert_intrinsics(K), np.eye(4), rtol=0, atol=1e-12)


def test_degenerate_focal_length():
    K = CameraIntrinsics(1e-13, 1.0, 0.0, 0.0, 1, 1)
    with pytest.raises(DegenerateIntrinsicsError):
        invert_intrinsics(K)


def test_invalid_intrinsics_rejected():
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.0, 1.0, 0.5, 0.5, 2, 2)
    with pytest.raises(ConfigError):
        CameraIntrinsics(1.0, 1.0, 0.5, 0.5, 0, 2)
    with pytest.warns(UserWarning, match="principal point"):
        CameraIntrinsics(1.0, 1.0, 5.0, 0.5, 2, 2)


def test_pose_validation():
    with pytest.raises(ValueError):
        PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        PoseSE3(2 * np.eye(3), np.zeros(3))


def test_pose_algebra(rng):
    a, b = random_pose(rng), random_pose(rng)
    np.testing.assert_allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)
    np.testing.assert_allclose((a @ a.inverse()).matrix(), np.eye(4), atol=1e-12)


def test_backproject_principal_ray():
    np.testing.assert_array_equal(backproject_pixel(unit_camera(), PoseSE3(), 0, 0, 5.0), [0, 0, 5])


def test_backproject_hand_evaluated():
    K = CameraIntrinsics(100, 100, 50, 50, 200, 100)
    np.testing.assert_allclose(backproject_pixel(K, PoseSE3(), 150, 50, 2.0), [2.0, 0.0, 2.0], atol=1e-15)


def test_backproject_pure_translation(rng):
    K = random_intrinsics(rng)
    t = rng.uniform(-10, 10, 3)
    for _ in range(20):
        u, v, z = rng.uniform(0, 64), rng.uniform(0, 48), rng.uniform(0.1, 40)
        base = backproject_pixel(K, PoseSE3(), u, v, z)
        moved = backproject_pixel(K, PoseSE3(np.eye(3), t), u, v, z)
        np.testing.assert_allclose(moved, base + t, rtol=0, atol=1e-12)


@pytest.mark.parametrize("z", [0.0, -1.0, np.nan, np.inf])
def test_backproject_pixel_invalid_depth(z):
    with pytest.raises(InvalidDepthError):
        backproject_pixel(unit_camera(), PoseSE3(), 0, 0, z)


def test_frame_constant_depth_full_resolution():
    K = CameraIntrinsics(320, 320, 320, 240, 640, 480)
    batch = backproject_frame(K, PoseSE3(), np.full((480, 640), 3.0))
    assert len(batch) == 307_200
    np.testing.assert_allclose(batch.points[:, 2], 3.0, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(batch.points[:, 3], 1.0)


def test_frame_all_zero_depth_is_empty():
    K = CameraIntrinsics(10, 10, 4, 3, 8, 6)
    batch = backproject_frame(K, PoseSE3(), np.zeros((6, 8)))
    assert len(batch) == 0
    assert batch.num_filtered == 48


def test_frame_matches_per_pixel_oracle(rng):
    K = random_intrinsics(rng, 16, 12)
    pose = random_pose(rng)
    depth = rng.uniform(0.2, 20, (12, 16))
    batch = backproject_frame(K, pose, depth)
    expected = per_pixel_oracle(K, pose, depth)
    np.testing.assert_allclose(batch.xyz, expected, rtol=1e-9, atol=0)


def test_frame_filters_and_orders(rng):
    K = random_intrinsics(rng, 16, 12)
    pose = random_pose(rng)
    depth = rng.uniform(0.2, 80, (12, 16))
    depth[rng.random(depth.shape) < 0.2] = 0.0
    depth[0, 3] = np.nan
    depth[5, 5] = -np.inf
    batch = backproject_frame(K, pose, depth, max_range=50.0)
    valid = np.isfinite(depth) & (depth > 0) & (depth <= 50.0)
    np.testing.assert_array_equal(batch.pixel_index, np.flatnonzero(valid))
    assert len(batch) + batch.num_filtered == depth.size
    np.testing.assert_allclose(batch.xyz, per_pixel_oracle(K, pose, depth), rtol=1e-9)


def test_frame_stride_matches_oracle(rng):
    K = random_intrinsics(rng, 16, 12)
    pose = random_pose(rng)
    depth = rng.uniform(0.2, 20, (12, 16))
    batch = backproject_frame(K, pose, depth, stride=3)
    np.testing.assert_allclose(batch.xyz, per_pixel_oracle(K, pose, depth, stride=3), rtol=1e-9)
    assert len(batch) == 4 * 6


def test_frame_dimension_mismatch():
    K = CameraIntrinsics(10, 10, 4, 3, 8, 6)
    with pytest.raises(DimensionMismatchError):
        backproject_frame(K, PoseSE3(), np.ones((8, 6)))


def test_camera_conventions_are_axis_permutations(rng):
    K = random_intrinsics(rng, 16, 12)
    depth = rng.uniform(1, 5, (12, 16))
    cv = backproject_frame(K, PoseSE3(), depth).xyz
    gl = backproject_frame(K, PoseSE3(), depth, convention="opengl").xyz
    ned = backproject_frame(K, PoseSE3(), depth, convention="ned").xyz
    np.testing.assert_allclose(gl, cv * [1, -1, -1], atol=1e-12)
    np.testing.assert_allclose(ned, cv[:, [2, 0, 1]], atol=1e-12)
    with pytest.raises(ConfigError):
        backproject_frame(K, PoseSE3(), depth, convention="enu")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), w=st.integers(1, 64), h=st.integers(1, 48))
def test_property_batch_equals_per_pixel(seed, w, h):
    rng = np.random.default_rng(seed)
    K = random_intrinsics(rng, w, h)
    pose = random_pose(rng)
    depth = rng.uniform(-5, 60, (h, w))
    batch = backproject_frame(K, pose, depth)
    np.testing.assert_allclose(batch.xyz, per_pixel_oracle(K, pose, depth), rtol=1e-9)
    np.testing.assert_array_equal(batch.points[:, 3], 1.0)
    assert len(batch) + batch.num_filtered == w * h


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_property_rigid_motion_consistency(seed):
    rng = np.random.default_rng(seed)
    K = random_intrinsics(rng, 16, 12)
    pose = random_pose(rng)
    depth = rng.uniform(0.5, 10, (12, 16))
    local = backproject_frame(K, PoseSE3(), depth).xyz
    world = backproject_frame(K, pose, depth).xyz
    np.testing.assert_allclose(pose.transform_points(local), world, rtol=0, atol=1e-12)
