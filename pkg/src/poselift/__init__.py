"""Heatmap and depth-volume codecs, losses, metrics, and a residual MLP
lifting network for 2.5D to 3D human pose estimation."""

from .datagen import GenerationConfig, generate_dataset, load_dataset
from .depthvol import encode_volume
from .heatmap2d import render_bone_heatmaps, render_joint_heatmaps
from .lifting import (
    TrainConfig,
    init_network,
    load_checkpoint,
    predict_pose3d,
    save_checkpoint,
    train,
)
from .metrics import evaluate_poses, mpjpe, pa_mpjpe, pck3d
from .skeleton import (
    GEODESIC_REFERENCE_MM,
    Pose2D,
    Pose3D,
    Pose25D,
    Skeleton,
    default_skeleton,
    geodesic_distance,
    normalize_scale,
)
from .softargmax import assemble_pose25d

__version__ = "0.1.0"

__all__ = [
    "GEODESIC_REFERENCE_MM",
    "GenerationConfig",
    "Pose2D",
    "Pose3D",
    "Pose25D",
    "Skeleton",
    "TrainConfig",
    "assemble_pose25d",
    "default_skeleton",
    "encode_volume",
    "evaluate_poses",
    "generate_dataset",
    "geodesic_distance",
    "init_network",
    "load_checkpoint",
    "load_dataset",
    "mpjpe",
    "normalize_scale",
    "pa_mpjpe",
    "pck3d",
    "predict_pose3d",
    "render_bone_heatmaps",
    "render_joint_heatmaps",
    "save_checkpoint",
    "train",
    "__version__",
]
