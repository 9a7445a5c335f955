"""Semantic voxel mapping from posed depth and label frames."""

from .bki import (
    KernelFilter,
    VoxelGrid,
    build_kernel,
    export_expected_map,
    point_to_voxel,
    query_voxel,
    update_map,
)
from .cloud import FrameBundle, LabelRemap, SemanticPointCloud, frame_to_cloud, remap_labels
from .geometry import (
    CameraConfig,
    CameraIntrinsics,
    PoseSE3,
    backproject_frame,
    backproject_pixel,
    intrinsics_matrix,
    invert_intrinsics,
)
from .metrics import Trajectory, align_rigid, associate, ate_rmse, evaluate, kitti_errors, rpe

__version__ = "0.1.0"

__all__ = [
    "CameraConfig",
    "CameraIntrinsics",
    "FrameBundle",
    "KernelFilter",
    "LabelRemap",
    "PoseSE3",
    "SemanticPointCloud",
    "Trajectory",
    "VoxelGrid",
    "align_rigid",
    "associate",
    "ate_rmse",
    "backproject_frame",
    "backproject_pixel",
    "build_kernel",
    "evaluate",
    "export_expected_map",
    "frame_to_cloud",
    "intrinsics_matrix",
    "invert_intrinsics",
    "kitti_errors",
    "point_to_voxel",
    "query_voxel",
    "remap_labels",
    "rpe",
    "update_map",
]
