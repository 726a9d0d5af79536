"""Trajectory-prior 3D single-object tracking.

A two-stage tracker: a pluggable short-term base tracker proposes a box per
frame, a trajectory CVAE predicts one from the track history alone, and an
IoU gate picks between them. Ships with the simulator, trainer, metrics,
and CLI needed to exercise the whole loop.
"""

from .geometry import Box3D, MotionDelta, apply_motion, bev_corners, bev_iou, center_distance, iou_3d
from .imm import IMMConfig, IMMModel, LatentGaussian, PredictedTrajectory, TrajectoryHistory, TrajState
from .metrics import FrameResult, TrackReport, aggregate_reports, precision_score, success_score
from .pipeline import RefinementConfig, TrackerOutput, refine, track_sequence
from .trackers import BaseTrackerKind, propose_local
from .trajformer import TrajFormerConfig
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "MotionDelta",
    "apply_motion",
    "bev_corners",
    "bev_iou",
    "center_distance",
    "iou_3d",
    "IMMConfig",
    "IMMModel",
    "LatentGaussian",
    "PredictedTrajectory",
    "TrajectoryHistory",
    "TrajState",
    "FrameResult",
    "TrackReport",
    "aggregate_reports",
    "precision_score",
    "success_score",
    "RefinementConfig",
    "TrackerOutput",
    "refine",
    "track_sequence",
    "BaseTrackerKind",
    "propose_local",
    "TrajFormerConfig",
    "TrainConfig",
    "train",
]
