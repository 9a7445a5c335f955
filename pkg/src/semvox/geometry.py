"""Pinhole camera model, rigid poses and depth back-projection.

Pixel coordinates are integer (u = column, v = row). Depth is metric
distance along the optical axis. Poses are camera-to-world.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateIntrinsicsError,
    DimensionMismatchError,
    InvalidDepthError,
    ConfigError,
)

DEFAULT_MAX_RANGE = 50.0

# Fixed axis permutations taking an OpenCV optical-frame point (x right,
# y down, z forward) into the camera frame the poses are expressed in.
CAMERA_CONVENTIONS = {
    "opencv": np.eye(4),
    "opengl": np.diag([1.0, -1.0, -1.0, 1.0]),
    "ned": np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    ),
}


def convention_matrix(name: str) -> np.ndarray:
    try:
        return CAMERA_CONVENTIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown camera_convention {name!r}; expected one of {sorted(CAMERA_CONVENTIONS)}"
        ) from None


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            warnings.warn(
                f"principal point ({self.cx}, {self.cy}) lies outside the "
                f"{self.width}x{self.height} image",
                stacklevel=2,
            )

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), matching depth map array shape."""
        return (self.height, self.width)


@dataclass(frozen=True)
class CameraConfig:
    """Intrinsics plus the per-dataset projection options stored alongside them."""

    intrinsics: CameraIntrinsics
    max_range: float = DEFAULT_MAX_RANGE
    camera_convention: str = "opencv"
    inverse_depth: bool = False

    def __post_init__(self):
        if not self.max_range > 0:
            raise ConfigError(f"max_range must be positive, got {self.max_range}")
        convention_matrix(self.camera_convention)


def _check_rotation(rotation: np.ndarray, tol: float = 1e-9) -> None:
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > tol:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > tol:
        raise ValueError("rotation has determinant != +1")


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform. As a camera pose it maps camera coordinates to world."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(rotation)
        if not np.all(np.isfinite(translation)):
            raise ValueError("translation must be finite")
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> PoseSE3:
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> PoseSE3:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4) or not np.allclose(matrix[3], [0, 0, 0, 1], atol=1e-12):
            raise ValueError("expected a 4x4 homogeneous rigid transform")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> PoseSE3:
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def __matmul__(self, other: PoseSE3) -> PoseSE3:
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N, 3) array of points."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __repr__(self):
        return f"PoseSE3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class WorldPointBatch:
    """Back-projected points.

    ``points`` is (N, 4) homogeneous world coordinates. ``pixel_index`` holds the
    flat row-major index of the source pixel in the full frame.
    """

    points: np.ndarray
    pixel_index: np.ndarray
    num_filtered: int = 0

    def __len__(self):
        return len(self.pixel_index)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


def intrinsics_matrix(K: CameraIntrinsics) -> np.ndarray:
    """Homogeneous 4x4 embedding of the pinhole matrix."""
    return np.array(
        [
            [K.fx, K.skew, K.cx, 0.0],
            [0.0, K.fy, K.cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def invert_intrinsics(K: CameraIntrinsics) -> np.ndarray:
    """Closed-form inverse of :func:`intrinsics_matrix`."""
    fx, fy, cx, cy, s = K.fx, K.fy, K.cx, K.cy, K.skew
    if abs(fx) < 1e-12 or abs(fy) < 1e-12:
        raise DegenerateIntrinsicsError(f"focal length too small to invert (fx={fx}, fy={fy})")
    fxfy = fx * fy
    return np.array(
        [
            [1.0 / fx, -s / fxfy, (s * cy - cx * fy) / fxfy, 0.0],
            [0.0, 1.0 / fy, -cy / fy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def projection_matrix(K: CameraIntrinsics, pose: PoseSE3, convention: str = "opencv") -> np.ndarray:
    """The 4x4 map from (u, v, 1, 1/z) to world coordinates divided by z."""
    return pose.matrix() @ convention_matrix(convention) @ invert_intrinsics(K)


def backproject_pixel(
    K: CameraIntrinsics, pose: PoseSE3, u: float, v: float, z: float, convention: str = "opencv"
) -> np.ndarray:
    if not (np.isfinite(z) and z > 0):
        raise InvalidDepthError(f"depth must be finite and positive, got {z}")
    pixel = np.array([u, v, 1.0, 1.0 / z])
    return (z * (projection_matrix(K, pose, convention) @ pixel))[:3]


@lru_cache(maxsize=16)
def _pixel_grid(width: int, height: int, stride: int):
    rows = np.arange(0, height, stride)
    cols = np.arange(0, width, stride)
    index = (rows[:, None] * width + cols[None, :]).ravel()
    u = np.tile(cols.astype(np.float64), len(rows))
    v = np.repeat(rows.astype(np.float64), len(cols))
    for arr in (index, u, v):
        arr.flags.writeable = False
    return index, u, v


def backproject_frame(
    K: CameraIntrinsics,
    pose: PoseSE3,
    depth: np.ndarray,
    *,
    max_range: float = DEFAULT_MAX_RANGE,
    convention: str = "opencv",
    stride: int = 1,
) -> WorldPointBatch:
    """Back-project every valid (stride-sampled) pixel of a depth map in one batch.

    Pixels whose depth is non-finite, non-positive or beyond ``max_range``
    are dropped. Output rows follow source-pixel row-major order.
    """
    depth = np.asarray(depth)
    if depth.shape != K.shape:
        raise DimensionMismatchError(
            f"depth map is {depth.shape[::-1]} (WxH) but intrinsics expect {K.width}x{K.height}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    index, u, v = _pixel_grid(K.width, K.height, int(stride))
    z = depth[::stride, ::stride].astype(np.float64, copy=False).ravel()
    with np.errstate(invalid="ignore"):
        keep = np.flatnonzero(np.isfinite(z) & (z > 0) & (z <= max_range))
    pixels = np.empty((4, len(keep)))
    if len(keep) == len(z):
        pixels[0] = u
        pixels[1] = v
        pixel_index = index
    else:
        z = z[keep]
        pixels[0] = u[keep]
        pixels[1] = v[keep]
        pixel_index = index[keep]
    # rows of ``pixels`` are the homogeneous components, each contiguous
    pixels[2] = 1.0
    np.divide(1.0, z, out=pixels[3])

    world = projection_matrix(K, pose, convention) @ pixels
    world[:3] *= z
    # z * (1/z) is only 1 up to roundoff
    world[3] = 1.0
    return WorldPointBatch(world.T, pixel_index, num_filtered=len(index) - len(keep))
