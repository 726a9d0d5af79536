"""Oriented 3D boxes, rotated BEV IoU, center distance, and motion composition.

A box is the 7-tuple (x, y, z, h, w, l, theta): center, size, and yaw about
the vertical axis. Yaw is always normalized to (-pi, pi]. Box footprints are
l-by-w rectangles (l along the heading axis), so overlap of two boxes in
bird's-eye view is a rotated-rectangle intersection; it is computed exactly
by convex polygon clipping, not sampling.

The clipping kernel has two interchangeable backends: a numba-compiled one
(default when numba is importable) and a pure reference one. Set the
environment variable ``TRAJSOT_NUMBA=0`` before import to force the
reference backend. ``kernel_backend()`` reports which one is active.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import _rect_clip

_AREA_EPS = 1e-12

if os.environ.get("TRAJSOT_NUMBA", "1").lower() in ("0", "false", "no"):
    _inter_area = _rect_clip.rect_intersection_area
    _BACKEND = "numpy"
else:
    try:
        from . import _rect_clip_numba

        _inter_area = _rect_clip_numba.rect_intersection_area
        _BACKEND = "numba"
    except ImportError:  # numba missing: fall back silently
        _inter_area = _rect_clip.rect_intersection_area
        _BACKEND = "numpy"


def kernel_backend() -> str:
    """Name of the active overlap kernel backend ("numba" or "numpy")."""
    return _BACKEND


class DegenerateBoxWarning(RuntimeWarning):
    """Raised as a warning when an IoU operand has (near-)zero footprint."""


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the interval (-pi, pi]."""
    w = math.remainder(theta, math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


def _require_finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} has non-finite component {v!r}")


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box: center (x, y, z), size (h, w, l), yaw theta.

    Sizes must be strictly positive; theta is normalized to (-pi, pi] on
    construction, so two boxes describing the same pose compare equal.
    """

    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    theta: float

    def __post_init__(self):
        for name in ("x", "y", "z", "h", "w", "l"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _require_finite("Box3D", self.x, self.y, self.z, self.h, self.w, self.l, self.theta)
        if self.h <= 0 or self.w <= 0 or self.l <= 0:
            raise ValueError(f"Box3D sizes must be positive, got h={self.h} w={self.w} l={self.l}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def footprint_area(self) -> float:
        return self.w * self.l


@dataclass(frozen=True)
class MotionDelta:
    """Inter-frame motion: translation (dx, dy, dz) and yaw increment dtheta."""

    dx: float
    dy: float
    dz: float
    dtheta: float

    def __post_init__(self):
        for name in ("dx", "dy", "dz", "dtheta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _require_finite("MotionDelta", self.dx, self.dy, self.dz, self.dtheta)

    def inverse(self) -> "MotionDelta":
        return MotionDelta(-self.dx, -self.dy, -self.dz, -self.dtheta)


def apply_motion(prev: Box3D, delta: MotionDelta) -> Box3D:
    """Advance a box by a motion delta: translate the center, add the yaw.

    Sizes are copied unchanged (a tracked object keeps its extent). The
    resulting yaw is re-wrapped into (-pi, pi].
    """
    return Box3D(
        prev.x + delta.dx,
        prev.y + delta.dy,
        prev.z + delta.dz,
        prev.h,
        prev.w,
        prev.l,
        wrap_angle(prev.theta + delta.dtheta),
    )


def with_pose(ref: Box3D, x: float, y: float, z: float, theta: float) -> Box3D:
    """A box at the given pose carrying ``ref``'s sizes."""
    return Box3D(x, y, z, ref.h, ref.w, ref.l, theta)


def bev_corners(box: Box3D) -> np.ndarray:
    """Footprint corners in bird's-eye view, shape (4, 2), CCW order.

    The footprint is the l-by-w rectangle centered at (x, y) and rotated
    by theta: l extends along the heading axis, w across it.
    """
    c = math.cos(box.theta)
    s = math.sin(box.theta)
    hl = 0.5 * box.l
    hw = 0.5 * box.w
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    out = np.empty((4, 2))
    for i, (lx, ly) in enumerate(local):
        out[i, 0] = box.x + c * lx - s * ly
        out[i, 1] = box.y + s * lx + c * ly
    return out


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Exact bird's-eye-view IoU of two boxes' rotated footprints.

    Degenerate footprints (area below 1e-12) yield 0.0 with a
    DegenerateBoxWarning instead of raising, so sequence evaluation never
    aborts on a collapsed box.
    """
    area_a = a.footprint_area
    area_b = b.footprint_area
    if area_a < _AREA_EPS or area_b < _AREA_EPS:
        warnings.warn("IoU of a degenerate (zero-footprint) box is defined as 0", DegenerateBoxWarning)
        return 0.0
    inter = float(_inter_area(bev_corners(a), bev_corners(b)))
    inter = min(inter, area_a, area_b)
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def _vertical_overlap(a: Box3D, b: Box3D) -> float:
    lo = max(a.z - 0.5 * a.h, b.z - 0.5 * b.h)
    hi = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h)
    return max(hi - lo, 0.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: BEV intersection extruded by the vertical overlap.

    Used for per-frame evaluation; the refinement gate uses `bev_iou`.
    """
    area_a = a.footprint_area
    area_b = b.footprint_area
    if area_a < _AREA_EPS or area_b < _AREA_EPS:
        warnings.warn("IoU of a degenerate (zero-footprint) box is defined as 0", DegenerateBoxWarning)
        return 0.0
    inter_bev = float(_inter_area(bev_corners(a), bev_corners(b)))
    inter_bev = min(inter_bev, area_a, area_b)
    inter = inter_bev * _vertical_overlap(a, b)
    union = area_a * a.h + area_b * b.h - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centers."""
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)
