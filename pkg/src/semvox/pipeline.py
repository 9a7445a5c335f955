"""Run configuration and the streaming frame -> cloud -> map driver."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bki import (
    DEFAULT_KERNEL_L,
    DEFAULT_KERNEL_SIGMA0,
    DEFAULT_PRIOR_ALPHA,
    DEFAULT_RESOLUTION,
    VoxelGrid,
    build_kernel,
    export_expected_map,
    update_map,
)
from .cloud import FrameBundle, frame_to_cloud
from .errors import ConfigError, SemvoxError
from .metrics import DEFAULT_KITTI_LENGTHS, DEFAULT_MAX_DT, DEFAULT_RPE_DELTA, associate, Trajectory

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    dataset: Optional[Path] = None
    intrinsics: Optional[Path] = None
    trajectory: Optional[Path] = None
    remap: Optional[Path] = None
    voxel_res: float = DEFAULT_RESOLUTION
    origin: tuple = (0.0, 0.0, 0.0)
    kernel_l: float = DEFAULT_KERNEL_L
    kernel_sigma0: float = DEFAULT_KERNEL_SIGMA0
    kernel_weights: Optional[Path] = None
    prior_alpha: float = DEFAULT_PRIOR_ALPHA
    stride: int = 1
    max_range: Optional[float] = None
    associate: str = "index"
    max_dt: float = DEFAULT_MAX_DT
    min_confidence: float = 0.0
    rpe_delta: int = DEFAULT_RPE_DELTA
    kitti_lengths: tuple = DEFAULT_KITTI_LENGTHS
    scale_align: bool = False
    out: Optional[Path] = None
    ply_dir: Optional[Path] = None
    ply_mode: str = "binary"

    def validate(self) -> None:
        if self.dataset is None:
            raise ConfigError("no dataset root given")
        if not Path(self.dataset).is_dir():
            raise ConfigError(f"dataset root {self.dataset} does not exist")
        for name in ("intrinsics", "trajectory", "remap", "kernel_weights"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} file {path} does not exist")
        if not self.voxel_res > 0:
            raise ConfigError(f"voxel_res must be positive, got {self.voxel_res}")
        if self.kernel_weights is None and not (self.kernel_l > 0 and self.kernel_sigma0 > 0):
            raise ConfigError("kernel_l and kernel_sigma0 must be positive")
        if not self.prior_alpha >= 0:
            raise ConfigError(f"prior_alpha must be >= 0, got {self.prior_alpha}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.max_range is not None and not self.max_range > 0:
            raise ConfigError(f"max_range must be positive, got {self.max_range}")
        if self.associate not in ("index", "timestamp"):
            raise ConfigError(f"associate must be 'index' or 'timestamp', got {self.associate!r}")
        if self.max_dt < 0 or self.min_confidence < 0:
            raise ConfigError("max_dt and min_confidence must be >= 0")
        if self.rpe_delta < 1:
            raise ConfigError(f"rpe_delta must be >= 1, got {self.rpe_delta}")
        if not self.kitti_lengths or min(self.kitti_lengths) <= 0:
            raise ConfigError("kitti_lengths must be a non-empty list of positive lengths")
        if len(self.origin) != 3:
            raise ConfigError("origin needs three coordinates")
        if self.ply_mode not in ("ascii", "binary"):
            raise ConfigError(f"ply_mode must be 'ascii' or 'binary', got {self.ply_mode!r}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def merged(self, values: dict) -> RunConfig:
        """Copy with string or typed ``values`` applied (config file or CLI flags)."""
        out = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in self.keys():
                raise ConfigError(f"unknown config key {key!r}")
            if value is None:
                continue
            setattr(out, key, _coerce(key, value))
        return out


_PATH_KEYS = {"dataset", "intrinsics", "trajectory", "remap", "kernel_weights", "out", "ply_dir"}
_FLOAT_KEYS = {"voxel_res", "kernel_l", "kernel_sigma0", "prior_alpha", "max_range", "max_dt", "min_confidence"}
_INT_KEYS = {"stride", "rpe_delta"}


def _coerce(key: str, value):
    try:
        if key in _PATH_KEYS:
            return Path(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _INT_KEYS:
            return int(value)
        if key == "scale_align":
            return value if isinstance(value, bool) else io.parse_bool(value)
        if key in ("kitti_lengths", "origin"):
            if isinstance(value, str):
                value = value.replace(",", " ").split()
            return tuple(float(v) for v in value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def load_run_config(path) -> dict:
    return io.parse_key_values(path, RunConfig.keys() + [k.replace("_", "-") for k in RunConfig.keys()])


@dataclass
class BuildReport:
    frames: int = 0
    points: int = 0
    voxels: int = 0
    projection_ms: list = field(default_factory=list)
    update_ms: list = field(default_factory=list)
    total_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "frames": self.frames,
            "points": self.points,
            "voxels": self.voxels,
            "projection_ms_mean": float(np.mean(self.projection_ms)) if self.projection_ms else 0.0,
            "update_ms_mean": float(np.mean(self.update_ms)) if self.update_ms else 0.0,
            "projection_ms_max": float(np.max(self.projection_ms)) if self.projection_ms else 0.0,
            "update_ms_max": float(np.max(self.update_ms)) if self.update_ms else 0.0,
            "total_s": self.total_s,
        }


def _frame_poses(layout: io.DatasetLayout, traj: Trajectory, config: RunConfig):
    n = len(layout)
    if config.associate == "index":
        if len(traj) < n:
            raise ConfigError(f"trajectory has {len(traj)} poses for {n} frames")
        return traj.timestamps[:n], traj.poses()[:n]
    times = layout.read_frame_times()
    frames = Trajectory(times, np.broadcast_to(np.eye(3), (n, 3, 3)), np.zeros((n, 3)))
    pairs = associate(frames, traj, config.max_dt)
    if len(pairs) != n:
        raise ConfigError(f"only {len(pairs)} of {n} frames have a pose within max_dt={config.max_dt}")
    return times, pairs.ref.poses()


def build_map(config: RunConfig) -> tuple[VoxelGrid, BuildReport]:
    """Stream every frame through projection and the map update, one frame in memory at a time."""
    config.validate()
    started = time.perf_counter()
    layout = io.DatasetLayout.discover(config.dataset, config.trajectory, config.intrinsics, config.remap)
    if layout.intrinsics is None or layout.remap is None:
        raise ConfigError(f"dataset {layout.root} needs an intrinsics file and a remap file")
    camera = io.read_intrinsics(layout.intrinsics)
    remap = io.read_remap(layout.remap)
    max_range = config.max_range if config.max_range is not None else camera.max_range

    if config.kernel_weights is not None:
        kernel = io.read_kernel_weights(config.kernel_weights)
    else:
        kernel = build_kernel(config.kernel_l, config.kernel_sigma0, config.voxel_res)
    grid = VoxelGrid(config.voxel_res, remap.num_target_classes, config.origin, config.prior_alpha)
    report = BuildReport()

    if len(layout):
        if layout.trajectory is None:
            raise ConfigError(f"dataset {layout.root} has frames but no trajectory file")
        stamps, poses = _frame_poses(layout, io.read_trajectory(layout.trajectory), config)
    for index in range(len(layout)):
        try:
            depth = io.read_depth_frame(layout.depth_files[index], camera.inverse_depth)
            labels = io.read_label_frame(layout.label_files[index])
            frame = FrameBundle(float(stamps[index]), depth, labels)
            t0 = time.perf_counter()
            cloud = frame_to_cloud(
                frame,
                poses[index],
                camera.intrinsics,
                remap,
                config.stride,
                max_range=max_range,
                convention=camera.camera_convention,
            )
            t1 = time.perf_counter()
            stats = update_map(grid, cloud, kernel, ignore_class=remap.unlabeled_id)
            t2 = time.perf_counter()
            if config.ply_dir is not None:
                io.write_ply(cloud, Path(config.ply_dir) / f"{index:06d}.ply", config.ply_mode)
        except SemvoxError as exc:
            exc.frame_index = index
            raise
        report.projection_ms.append(1e3 * (t1 - t0))
        report.update_ms.append(1e3 * (t2 - t1))
        report.points += stats.points_used
        report.frames += 1
        log.debug("frame %d: %d points, %d voxels touched", index, stats.points_used, stats.voxels_touched)

    if config.out is not None:
        records = export_expected_map(grid, config.min_confidence)
        meta = io.VoxelMapMeta(grid.resolution, tuple(grid.origin.tolist()), grid.num_classes)
        io.write_voxel_map(records, meta, config.out)
    report.voxels = len(grid)
    report.total_s = time.perf_counter() - started
    return grid, report
