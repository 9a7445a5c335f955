"""Analytic test scenes: a ground plane plus axis-aligned boxes, rendered
into depth and label frames from a parametric camera path.

Every pixel's depth and class come from a closed-form ray intersection,
so the rendered dataset doubles as ground truth for the mapper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .bki import VoxelRecord, pack_keys, unpack_keys
from .cloud import LabelRemap
from .errors import ConfigError
from .geometry import CameraConfig, CameraIntrinsics, PoseSE3, invert_intrinsics
from .metrics import Trajectory

FRAME_PERIOD = 0.1
# face order for Box.face_classes
FACES = ("-x", "+x", "-y", "+y", "-z", "+z")


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    face_classes: tuple

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3 or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ConfigError(f"box needs min < max on every axis, got {self.lo} / {self.hi}")
        if len(self.face_classes) != 6:
            raise ConfigError("box face_classes needs 6 entries (-x, +x, -y, +y, -z, +z)")


@dataclass(frozen=True)
class CameraPath:
    kind: str = "circle"
    center: tuple = (0.0, 0.0)
    radius: float = 6.0
    height: float = 2.5
    target: tuple = (0.0, 0.0, 0.5)
    arc_degrees: float = 360.0
    start: tuple = (0.0, 0.0, 0.0)
    end: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("circle", "line"):
            raise ConfigError(f"path type must be 'circle' or 'line', got {self.kind!r}")

    def position(self, index: int, count: int) -> np.ndarray:
        if self.kind == "circle":
            theta = np.deg2rad(self.arc_degrees) * index / max(count, 1)
            return np.array(
                [
                    self.center[0] + self.radius * np.cos(theta),
                    self.center[1] + self.radius * np.sin(theta),
                    self.height,
                ]
            )
        s = index / max(count - 1, 1)
        return (1 - s) * np.asarray(self.start, float) + s * np.asarray(self.end, float)


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> PoseSE3:
    """Camera-to-world pose of an OpenCV camera at ``position`` facing ``target``."""
    position = np.asarray(position, float)
    forward = np.asarray(target, float) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        raise ConfigError("camera looks straight along the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return PoseSE3(np.stack([right, down, forward], axis=1), position)


@dataclass(frozen=True)
class SyntheticScene:
    camera: CameraConfig
    ground_height: float = 0.0
    ground_class: int = 1
    ground_extent: float = 12.0
    boxes: tuple = ()
    path: CameraPath = field(default_factory=CameraPath)
    depth_sigma: float = 0.0
    label_flip_prob: float = 0.0
    num_classes: int = 2
    seed: int = 0
    gt_resolution: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.label_flip_prob <= 1.0:
            raise ConfigError(f"label_flip_prob must be in [0, 1], got {self.label_flip_prob}")
        if self.depth_sigma < 0:
            raise ConfigError(f"depth_sigma must be >= 0, got {self.depth_sigma}")
        for c in self.classes:
            if not 1 <= c < self.num_classes:
                raise ConfigError(f"scene class {c} outside [1, {self.num_classes}); 0 is reserved for unlabeled")

    @property
    def classes(self) -> list[int]:
        found = {self.ground_class}
        for b in self.boxes:
            found.update(b.face_classes)
        return sorted(found)

    @classmethod
    def from_dict(cls, spec: dict) -> SyntheticScene:
        try:
            cam = spec["camera"]
            K = CameraIntrinsics(
                fx=float(cam["fx"]),
                fy=float(cam.get("fy", cam["fx"])),
                cx=float(cam.get("cx", (cam["width"] - 1) / 2)),
                cy=float(cam.get("cy", (cam["height"] - 1) / 2)),
                width=int(cam["width"]),
                height=int(cam["height"]),
            )
            camera = CameraConfig(K, max_range=float(cam.get("max_range", 50.0)))
            ground = spec.get("ground", {})
            boxes = tuple(
                Box(tuple(b["min"]), tuple(b["max"]), tuple(int(c) for c in b["face_classes"]))
                for b in spec.get("boxes", [])
            )
            p = dict(spec.get("path", {}))
            kind = p.pop("type", "circle")
            path = CameraPath(kind=kind, **{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()})
            noise = spec.get("noise", {})
            return cls(
                camera=camera,
                ground_height=float(ground.get("height", 0.0)),
                ground_class=int(ground.get("class", 1)),
                ground_extent=float(ground.get("extent", 12.0)),
                boxes=boxes,
                path=path,
                depth_sigma=float(noise.get("depth_sigma", 0.0)),
                label_flip_prob=float(noise.get("label_flip_prob", 0.0)),
                num_classes=int(spec["num_classes"]),
                seed=int(spec.get("seed", 0)),
                gt_resolution=float(spec.get("gt_resolution", 0.2)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scene spec: {exc!r}") from exc

    @classmethod
    def load(cls, path) -> SyntheticScene:
        try:
            spec = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read scene spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(spec)

    def pose(self, index: int, count: int) -> PoseSE3:
        return look_at(self.path.position(index, count), self.path.target)


def default_scene_spec(**overrides) -> dict:
    """Ground plane plus a building (walls + roof) and a car-sized box, circled from above.

    All planes sit mid-voxel at 0.2 m so roundoff never straddles a voxel boundary.
    """
    spec = {
        "seed": 0,
        "num_classes": 5,
        "camera": {"width": 640, "height": 480, "fx": 320.0, "fy": 320.0, "cx": 320.0, "cy": 240.0, "max_range": 30.0},
        "ground": {"height": 0.1, "class": 1, "extent": 9.9},
        "boxes": [
            {"min": [-1.9, -1.5, 0.1], "max": [1.1, 1.5, 2.5], "face_classes": [2, 2, 2, 2, 2, 3]},
            {"min": [2.1, 1.1, 0.1], "max": [3.7, 2.9, 1.3], "face_classes": [4, 4, 4, 4, 4, 4]},
        ],
        "path": {"type": "circle", "center": [0.0, 0.0], "radius": 7.0, "height": 3.5, "target": [0.0, 0.0, 0.5]},
        "noise": {"depth_sigma": 0.0, "label_flip_prob": 0.0},
        "gt_resolution": 0.2,
    }
    spec.update(overrides)
    return spec


def trace(scene: SyntheticScene, pose: PoseSE3):
    """Closed-form ray cast for every pixel.

    Returns (depth, labels) with depth 0 and label 0 where nothing is hit.
    Depth is the camera-frame z of the hit point.
    """
    K = scene.camera.intrinsics
    v, u = np.mgrid[0 : K.height, 0 : K.width]
    pix = np.stack([u.ravel(), v.ravel(), np.ones(u.size)], axis=0).astype(np.float64)
    rays_cam = invert_intrinsics(K)[:3, :3] @ pix  # unit z-component
    d = pose.rotation @ rays_cam
    o = pose.translation

    best = np.full(u.size, np.inf)
    label = np.zeros(u.size, dtype=np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t = (scene.ground_height - o[2]) / d[2]
        hit = (t > 0) & np.isfinite(t)
        x = o[0] + t * d[0]
        y = o[1] + t * d[1]
        hit &= (np.abs(x) <= scene.ground_extent) & (np.abs(y) <= scene.ground_extent)
        best = np.where(hit, t, best)
        label = np.where(hit, scene.ground_class, label)

        for box in scene.boxes:
            lo = np.asarray(box.lo, float)
            hi = np.asarray(box.hi, float)
            if np.all(o > lo) and np.all(o < hi):
                raise ConfigError("camera is inside a box")
            t1 = (lo[:, None] - o[:, None]) / d
            t2 = (hi[:, None] - o[:, None]) / d
            near = np.minimum(t1, t2)
            far = np.maximum(t1, t2)
            near = np.where(np.isnan(near), -np.inf, near)
            far = np.where(np.isnan(far), np.inf, far)
            axis = np.argmax(near, axis=0)
            t_near = near[axis, np.arange(u.size)]
            t_far = far.min(axis=0)
            hit = (t_near <= t_far) & (t_near > 0) & (t_near < best)
            # entering through the low face means the ray travels in +axis
            face = 2 * axis + (d[axis, np.arange(u.size)] < 0)
            best = np.where(hit, t_near, best)
            label = np.where(hit, np.asarray(box.face_classes)[face], label)

    depth = np.where(np.isfinite(best), best, 0.0)
    return depth.reshape(K.height, K.width), label.reshape(K.height, K.width)


def add_noise(scene: SyntheticScene, depth, labels, rng: np.random.Generator):
    """Gaussian depth noise and uniform label flips on hit pixels only."""
    valid = depth > 0
    noisy_depth = depth.copy()
    noisy_labels = labels.copy()
    depth_noise = rng.normal(0.0, 1.0, size=depth.shape)
    flip_draw = rng.random(size=depth.shape)
    shift_draw = rng.random(size=depth.shape)
    if scene.depth_sigma > 0:
        noisy_depth[valid] += scene.depth_sigma * depth_noise[valid]
    classes = np.asarray(scene.classes)
    m = len(classes)
    if scene.label_flip_prob > 0 and m > 1:
        flip = valid & (flip_draw < scene.label_flip_prob)
        pos = np.searchsorted(classes, labels[flip])
        shift = 1 + np.minimum((shift_draw[flip] * (m - 1)).astype(np.int64), m - 2)
        noisy_labels[flip] = classes[(pos + shift) % m]
    return noisy_depth, noisy_labels


def ground_truth_voxels(scene: SyntheticScene, frames) -> list[VoxelRecord]:
    """Majority true class of the noise-free rendered points inside each voxel.

    ``frames`` yields (pose, depth, labels). ``confidence`` holds the point count.
    """
    from .geometry import backproject_frame

    K = scene.camera.intrinsics
    res = scene.gt_resolution
    C = scene.num_classes
    counts: dict[int, np.ndarray] = {}
    for pose, depth, labels in frames:
        batch = backproject_frame(K, pose, depth, max_range=scene.camera.max_range)
        cls = labels.reshape(-1)[batch.pixel_index]
        keys, inv = np.unique(pack_keys(np.floor(batch.xyz / res).astype(np.int64)), return_inverse=True)
        hist = np.bincount(inv.ravel() * C + cls, minlength=len(keys) * C).reshape(-1, C)
        for key, row in zip(keys.tolist(), hist):
            if key in counts:
                counts[key] += row
            else:
                counts[key] = row.copy()
    if not counts:
        return []
    keys = np.array(sorted(counts), dtype=np.int64)
    table = np.stack([counts[k] for k in keys.tolist()])
    ijk = unpack_keys(keys)
    winners = np.argmax(table, axis=1)
    return [
        VoxelRecord(int(a), int(b), int(c), int(w), float(n))
        for (a, b, c), w, n in zip(ijk, winners, table.sum(axis=1))
    ]


def synthesize(scene: SyntheticScene, out_dir, frame_count: int) -> Path:
    """Render ``frame_count`` frames plus all side files into ``out_dir``."""
    if frame_count < 0:
        raise ConfigError(f"frame count must be >= 0, got {frame_count}")
    out = Path(out_dir)
    rng = np.random.default_rng(scene.seed)
    poses = [scene.pose(i, frame_count) for i in range(frame_count)]
    clean = []
    for i, pose in enumerate(poses):
        depth, labels = trace(scene, pose)
        noisy_depth, noisy_labels = add_noise(scene, depth, labels, rng)
        io.write_depth_frame(out / io.DEPTH_DIR / io.DatasetLayout.frame_name(i), noisy_depth)
        io.write_label_frame(out / io.LABEL_DIR / io.DatasetLayout.frame_name(i), noisy_labels)
        clean.append((pose, depth, labels))

    io.write_intrinsics(out / "intrinsics.txt", scene.camera)
    io.write_remap(out / "remap.txt", LabelRemap.identity(scene.num_classes, unlabeled_id=0))
    if poses:
        stamps = FRAME_PERIOD * np.arange(frame_count)
        io.write_trajectory(out / "trajectory.txt", Trajectory.from_poses(stamps, poses))
    meta = io.VoxelMapMeta(scene.gt_resolution, (0.0, 0.0, 0.0), scene.num_classes)
    io.write_voxel_map(ground_truth_voxels(scene, clean), meta, out / "ground_truth_voxels.txt")
    return out


def label_agreement(map_records, gt_records) -> float:
    """Fraction of ground-truth voxels whose mapped expected class matches."""
    if not gt_records:
        return 1.0
    mapped = {(r.i, r.j, r.k): r.expected_class for r in map_records}
    hits = sum(mapped.get((g.i, g.j, g.k)) == g.expected_class for g in gt_records)
    return hits / len(gt_records)
