"""Synthetic heart phantom: volume, slicing, standard planes, trajectories."""

from .planes import plane_structure_count, pose_separation, standard_plane_poses
from .slicing import ImageSpec, plane_points, quantize_image, sample_volume, slice_image
from .trajectory import ScanGenerationError, TrajectoryConfig, generate_scan
from .volume import (
    Ellipsoid,
    HeartLayout,
    Phantom,
    PhantomConfig,
    PhantomError,
    Shell,
    Tube,
    build_phantom,
    default_heart_layout,
    heart_structures,
    rasterize_structures,
)

__all__ = [
    "Ellipsoid",
    "HeartLayout",
    "ImageSpec",
    "Phantom",
    "PhantomConfig",
    "PhantomError",
    "ScanGenerationError",
    "Shell",
    "TrajectoryConfig",
    "Tube",
    "build_phantom",
    "default_heart_layout",
    "generate_scan",
    "heart_structures",
    "plane_points",
    "plane_structure_count",
    "pose_separation",
    "quantize_image",
    "rasterize_structures",
    "sample_volume",
    "slice_image",
    "standard_plane_poses",
]
