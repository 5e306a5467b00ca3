"""Paired-mirror catadioptric lens design, snapshot simulation and hull-regularized splatting."""

from .errors import (BehindCamera, CatoptraError, ConditionViolation, DegenerateFov, Diverged,
                     EmptyHull, GeometryMismatch, InfeasibleAngles, NonTriangleFace, NoValidPixels,
                     ParseError, SceneTooLarge, ShapeMismatch)
from .kernels import BACKEND
from .lens import (DesignMargins, MirrorPairConfig, SceneBox, SensorSpec, ViewingVolume,
                   check_conditions, design_lens, optimal_delta_alpha, viewing_volume)
from .unfolding import CameraPose, Intrinsics, VirtualCameraRig, build_rig, reproject_view

__version__ = "0.1.0"

__all__ = [
    "BehindCamera", "CatoptraError", "ConditionViolation", "DegenerateFov", "Diverged",
    "EmptyHull", "GeometryMismatch", "InfeasibleAngles", "NonTriangleFace", "NoValidPixels",
    "ParseError", "SceneTooLarge", "ShapeMismatch",
    "BACKEND", "DesignMargins", "MirrorPairConfig", "SceneBox", "SensorSpec", "ViewingVolume",
    "check_conditions", "design_lens", "optimal_delta_alpha", "viewing_volume",
    "CameraPose", "Intrinsics", "VirtualCameraRig", "build_rig", "reproject_view",
]
