import json

import numpy as np
import pytest

from semvox import io
from semvox.errors import ConfigError
from semvox.geometry import CameraConfig, CameraIntrinsics, intrinsics_matrix
from semvox.synth import (
    Box,
    CameraPath,
    SyntheticScene,
    add_noise,
    default_scene_spec,
    label_agreement,
    look_at,
    synthesize,
    trace,
)
from semvox.bki import VoxelRecord


def plane_scene(**kw):
    K = CameraIntrinsics(50.0, 45.0, 31.5, 23.5, 64, 48)
    return SyntheticScene(camera=CameraConfig(K, max_range=100.0), ground_height=0.3, ground_class=1,
                          ground_extent=1e3, num_classes=3, **kw)


def test_plane_depth_matches_ray_plane_intersection():
    scene = plane_scene()
    pose = look_at((0.5, -1.0, 4.0), (6.0, 2.0, 0.3))
    depth, labels = trace(scene, pose)
    Kinv = np.linalg.inv(intrinsics_matrix(scene.camera.intrinsics))[:3, :3]
    R, o = pose.rotation, pose.translation
    hits = 0
    for v in range(48):
        for u in range(64):
            ray = R @ (Kinv @ np.array([u, v, 1.0]))
            if ray[2] >= 0:
                assert depth[v, u] == 0 and labels[v, u] == 0
                continue
            # camera-frame ray has unit z, so the ray parameter is the depth
            expected = (0.3 - o[2]) / ray[2]
            assert depth[v, u] == pytest.approx(expected, abs=1e-6)
            assert labels[v, u] == 1
            hits += 1
    assert hits > 0.5 * 64 * 48


def test_look_at_axes():
    pose = look_at((0, 0, 0), (1, 0, 0))
    np.testing.assert_allclose(pose.rotation[:, 2], [1, 0, 0], atol=1e-15)
    # image down is world down
    np.testing.assert_allclose(pose.rotation[:, 1], [0, 0, -1], atol=1e-15)


def test_box_faces_classified():
    faces = (11, 12, 13, 14, 15, 16)
    K = CameraIntrinsics(10.0, 10.0, 1.5, 1.5, 4, 4)
    scene = SyntheticScene(camera=CameraConfig(K, 100.0), ground_height=-100.0, ground_class=1,
                           ground_extent=1.0, boxes=(Box((-1, -1, -1), (1, 1, 1), faces),), num_classes=17)
    views = {(-5, 0, 0): 11, (5, 0, 0): 12, (0, -5, 0): 13, (0, 5, 0): 14, (0.01, 0, -5): 15, (0.01, 0, 5): 16}
    for position, face_class in views.items():
        depth, labels = trace(scene, look_at(position, (0, 0, 0)))
        assert np.all(labels == face_class), position
        if position[0] != 0.01:  # the top/bottom views are slightly tilted
            np.testing.assert_allclose(depth, 4.0, atol=1e-9)


def test_camera_inside_box_rejected():
    scene = plane_scene(boxes=(Box((-1, -1, -1), (1, 1, 1), (2,) * 6),))
    with pytest.raises(ConfigError):
        trace(scene, look_at((0, 0, 0), (1, 0, 0)))


def test_flip_probability_one_flips_every_label():
    scene = plane_scene(boxes=(Box((4, -1, 0.3), (5, 1, 2), (2,) * 6),), label_flip_prob=1.0)
    assert scene.classes == [1, 2]
    depth, labels = trace(scene, look_at((0, 0, 1.5), (4, 0, 1)))
    assert set(np.unique(labels[depth > 0])) == {1, 2}
    _, noisy = add_noise(scene, depth, labels, np.random.default_rng(0))
    hit = depth > 0
    np.testing.assert_array_equal(noisy[hit], 3 - labels[hit])
    np.testing.assert_array_equal(noisy[~hit], 0)


def test_flip_rate_statistics():
    scene = plane_scene(boxes=(Box((4, -1, 0.3), (5, 1, 2), (2,) * 6),), label_flip_prob=0.2)
    depth, labels = trace(scene, look_at((0, 0, 1.5), (4, 0, 1)))
    _, noisy = add_noise(scene, depth, labels, np.random.default_rng(3))
    hit = depth > 0
    assert abs(np.mean(noisy[hit] != labels[hit]) - 0.2) < 0.03


def test_scene_validation():
    with pytest.raises(ConfigError):
        plane_scene(label_flip_prob=1.5)
    with pytest.raises(ConfigError):
        plane_scene(boxes=(Box((0, 0, 0), (1, 1, 1), (3,) * 6),))
    with pytest.raises(ConfigError):
        SyntheticScene.from_dict({"camera": {"width": 4}})


def test_camera_path_line_and_circle():
    line = CameraPath(kind="line", start=(0, 0, 1), end=(4, 0, 1))
    np.testing.assert_allclose([line.position(i, 5) for i in range(5)], [[i, 0, 1] for i in range(5)])
    circle = CameraPath(kind="circle", center=(1.0, 2.0), radius=3.0, height=2.0)
    for i in range(8):
        p = circle.position(i, 8)
        assert np.hypot(p[0] - 1, p[1] - 2) == pytest.approx(3.0)
        assert p[2] == 2.0


def small_spec(**overrides):
    spec = default_scene_spec(**overrides)
    spec["camera"] = {"width": 80, "height": 60, "fx": 40.0, "fy": 40.0, "cx": 39.5, "cy": 29.5, "max_range": 30.0}
    return spec


def test_synthesize_is_deterministic(tmp_path):
    scene = SyntheticScene.from_dict(small_spec(noise={"depth_sigma": 0.01, "label_flip_prob": 0.1}))
    a = synthesize(scene, tmp_path / "a", 4)
    b = synthesize(scene, tmp_path / "b", 4)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) == 4 * 2 + 4
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_synthesize_layout_and_ground_truth(tmp_path):
    scene = SyntheticScene.from_dict(small_spec())
    out = synthesize(scene, tmp_path / "d", 3)
    layout = io.DatasetLayout.discover(out)
    assert len(layout) == 3
    assert len(io.read_trajectory(layout.trajectory)) == 3
    assert io.read_intrinsics(layout.intrinsics) == scene.camera
    meta, gt = io.read_voxel_map(out / "ground_truth_voxels.txt")
    assert meta.num_classes == 5 and len(gt) > 0
    assert {r.expected_class for r in gt} <= {1, 2, 3, 4}


def test_scene_load_json(tmp_path):
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(small_spec(seed=7)))
    scene = SyntheticScene.load(path)
    assert scene.seed == 7 and len(scene.boxes) == 2
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        SyntheticScene.load(path)


def test_label_agreement():
    gt = [VoxelRecord(0, 0, 0, 1, 1.0), VoxelRecord(1, 0, 0, 2, 1.0)]
    assert label_agreement(gt, gt) == 1.0
    assert label_agreement([VoxelRecord(0, 0, 0, 1, 1.0)], gt) == 0.5
    assert label_agreement([], []) == 1.0
