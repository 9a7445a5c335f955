"""Labeled world-frame point clouds built from posed depth + label frames."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError, DimensionMismatchError
from .geometry import (
    DEFAULT_MAX_RANGE,
    CameraIntrinsics,
    PoseSE3,
    backproject_frame,
)

_LUT_SIZE = 1 << 16


@dataclass(frozen=True, eq=False)
class FrameBundle:
    timestamp: float
    depth: np.ndarray
    labels: np.ndarray
    color: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = np.shape(self.depth)
        if np.shape(self.labels) != shape:
            raise DimensionMismatchError(
                f"label map {np.shape(self.labels)} does not match depth map {shape}"
            )
        if self.color is not None and np.shape(self.color) != shape + (3,):
            raise DimensionMismatchError(
                f"color map {np.shape(self.color)} does not match depth map {shape}"
            )

    @property
    def shape(self):
        return np.shape(self.depth)


@dataclass(frozen=True, eq=False)
class LabelRemap:
    """Source-taxonomy to target-taxonomy class table.

    Source ids missing from ``table`` map to ``unlabeled_id``.
    """

    table: Mapping[int, int]
    num_target_classes: int
    unlabeled_id: int
    _lut: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        table = {int(k): int(v) for k, v in dict(self.table).items()}
        n = self.num_target_classes
        if n < 1:
            raise ConfigError(f"num_target_classes must be >= 1, got {n}")
        if not 0 <= self.unlabeled_id < n:
            raise ConfigError(f"unlabeled_id {self.unlabeled_id} outside [0, {n})")
        for src, dst in table.items():
            if not 0 <= src < _LUT_SIZE:
                raise ConfigError(f"source id {src} outside the 16-bit label range")
            if not 0 <= dst < n:
                raise ConfigError(f"target id {dst} for source {src} outside [0, {n})")
        lut = np.full(_LUT_SIZE, self.unlabeled_id, dtype=np.int64)
        if table:
            keys = np.fromiter(table.keys(), dtype=np.int64)
            lut[keys] = np.fromiter(table.values(), dtype=np.int64)
        lut.flags.writeable = False
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "_lut", lut)

    @classmethod
    def identity(cls, num_classes: int, unlabeled_id: int = 0) -> LabelRemap:
        return cls({i: i for i in range(num_classes)}, num_classes, unlabeled_id)


@dataclass(frozen=True, eq=False)
class SemanticPointCloud:
    points: np.ndarray
    classes: np.ndarray
    num_classes: int
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if len(points) != len(classes):
            raise DimensionMismatchError(f"{len(points)} points but {len(classes)} class ids")
        if len(classes) and (classes.min() < 0 or classes.max() >= self.num_classes):
            raise ConfigError(f"class ids must lie in [0, {self.num_classes})")
        colors = self.colors
        if colors is not None:
            colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(points):
                raise DimensionMismatchError(f"{len(points)} points but {len(colors)} colors")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "colors", colors)

    def __len__(self):
        return len(self.classes)

    @classmethod
    def empty(cls, num_classes: int) -> SemanticPointCloud:
        return cls(np.empty((0, 3)), np.empty(0, dtype=np.int64), num_classes)

    def transformed(self, pose: PoseSE3) -> SemanticPointCloud:
        return SemanticPointCloud(pose.transform_points(self.points), self.classes, self.num_classes, self.colors)

    @staticmethod
    def concatenate(clouds) -> SemanticPointCloud:
        clouds = list(clouds)
        num_classes = clouds[0].num_classes
        colors = None
        if all(c.colors is not None for c in clouds):
            colors = np.concatenate([c.colors for c in clouds])
        return SemanticPointCloud(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.classes for c in clouds]),
            num_classes,
            colors,
        )


def remap_labels(labels: np.ndarray, remap: LabelRemap) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= _LUT_SIZE):
        # out-of-range source ids are by definition not in the table
        inside = (labels >= 0) & (labels < _LUT_SIZE)
        out = np.full(labels.shape, remap.unlabeled_id, dtype=np.int64)
        out[inside] = remap._lut[labels[inside]]
        return out
    return remap._lut[labels]


def frame_to_cloud(
    frame: FrameBundle,
    pose: PoseSE3,
    K: CameraIntrinsics,
    remap: LabelRemap,
    stride: int = 1,
    *,
    max_range: float = DEFAULT_MAX_RANGE,
    convention: str = "opencv",
) -> SemanticPointCloud:
    if frame.shape != K.shape:
        raise DimensionMismatchError(
            f"frame is {frame.shape[1]}x{frame.shape[0]} but intrinsics expect {K.width}x{K.height}"
        )
    batch = backproject_frame(
        K, pose, frame.depth, max_range=max_range, convention=convention, stride=stride
    )
    source = np.asarray(frame.labels).reshape(-1)[batch.pixel_index]
    classes = remap_labels(source, remap)
    colors = None
    if frame.color is not None:
        colors = np.asarray(frame.color).reshape(-1, 3)[batch.pixel_index]
    return SemanticPointCloud(batch.xyz, classes, remap.num_target_classes, colors)
