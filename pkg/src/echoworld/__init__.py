"""Motion-aware world modeling for synthetic ultrasound probe guidance."""

__version__ = "0.1.0"

from .pose_algebra import Pose, compose, guidance_target, inverse, pose_error, relative

__all__ = [
    "Pose",
    "compose",
    "inverse",
    "relative",
    "guidance_target",
    "pose_error",
    "__version__",
]
