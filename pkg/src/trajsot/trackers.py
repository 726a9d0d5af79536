"""Pluggable short-term base trackers producing the per-frame local proposal.

Two stand-ins for a real two-frame tracker, both honoring the same
interface (history in, one box out) so anything else can be plugged in:

* ``cv`` - constant velocity: replays the last inter-frame displacement of
  the track so far. Purely history-driven; no ground-truth access.
* ``oracle`` - ground truth corrupted by planar Gaussian position noise,
  plus occasional gross failures: with probability ``failure_rate`` (or
  whenever the frame is flagged occluded) the center is displaced by
  ``failure_offset`` meters in a random planar direction.

Proposal sizes are always copied from the history's reference box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, MotionDelta, apply_motion, with_pose, wrap_angle
from .imm import TrajectoryHistory

VARIANTS = ("cv", "oracle")


@dataclass(frozen=True)
class BaseTrackerKind:
    """Which base tracker to run, with its corruption parameters."""

    variant: str = "cv"
    noise_sigma: float = 0.0
    failure_rate: float = 0.0
    failure_offset: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown tracker variant {self.variant!r}, expected one of {VARIANTS}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError("failure_rate must be in [0, 1]")
        if self.failure_offset < 0:
            raise ValueError("failure_offset must be >= 0")


def _last_box(history: TrajectoryHistory) -> Box3D:
    s = history.last()
    return with_pose(history.reference_box, s.x, s.y, s.z, s.theta)


def propose_local(
    tracker: BaseTrackerKind,
    history: TrajectoryHistory,
    gt_current: Box3D | None = None,
    rng: np.random.Generator | None = None,
    occluded: bool = False,
) -> Box3D:
    """One local proposal for the current frame.

    The oracle variant requires ``gt_current`` and, when any corruption is
    configured, an explicit ``rng`` stream (the module holds no random
    state). ``occluded`` forces a failure displacement regardless of
    ``failure_rate``.
    """
    if len(history) == 0:
        raise ValueError("propose_local requires a non-empty history")

    if tracker.variant == "cv":
        states = list(history.states)
        if len(states) >= 2:
            a, b = states[-2], states[-1]
            delta = MotionDelta(b.x - a.x, b.y - a.y, b.z - a.z, wrap_angle(b.theta - a.theta))
        else:
            delta = MotionDelta(0.0, 0.0, 0.0, 0.0)
        return apply_motion(_last_box(history), delta)

    # oracle
    if gt_current is None:
        raise ValueError("oracle tracker requires the current ground-truth box")
    x, y, z = gt_current.x, gt_current.y, gt_current.z
    needs_rng = tracker.noise_sigma > 0 or tracker.failure_rate > 0 or occluded
    if needs_rng and rng is None:
        raise ValueError("oracle tracker with noise or failures requires an rng stream")
    if tracker.noise_sigma > 0:
        nx, ny = rng.normal(0.0, tracker.noise_sigma, 2)
        x += nx
        y += ny
    fail = occluded
    if tracker.failure_rate > 0:
        fail = bool(rng.random() < tracker.failure_rate) or fail
    if fail:
        phi = rng.uniform(0.0, 2.0 * math.pi)
        x += tracker.failure_offset * math.cos(phi)
        y += tracker.failure_offset * math.sin(phi)
    return with_pose(history.reference_box, x, y, z, gt_current.theta)
