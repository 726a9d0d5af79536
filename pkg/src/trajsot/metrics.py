"""One-pass-evaluation Success and Precision over tracked sequences.

Success is the area under the curve of "fraction of frames with IoU >= t"
for t swept continuously over [0, 1], which collapses to the mean frame
IoU. Precision is the AUC of "fraction of frames with center error <= t"
for t over [0, 2] meters. Both are reported on a 0-100 scale. Sequence
scores aggregate as frame-count-weighted means.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PRECISION_MAX_ERROR = 2.0  # meters; upper bound of the error-threshold sweep


@dataclass(frozen=True)
class FrameResult:
    """Per-frame evaluation record."""

    frame_index: int
    iou: float
    center_error: float

    def __post_init__(self):
        object.__setattr__(self, "iou", float(self.iou))
        object.__setattr__(self, "center_error", float(self.center_error))
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou must be in [0, 1], got {self.iou}")
        if self.center_error < 0.0 or not np.isfinite(self.center_error):
            raise ValueError(f"center_error must be finite and >= 0, got {self.center_error}")


def success_score(frames) -> float:
    """Success on [0, 100]: AUC of the IoU-threshold curve = 100 * mean IoU."""
    if not frames:
        raise ValueError("success_score of an empty frame list")
    return 100.0 * float(np.mean([f.iou for f in frames]))


def precision_score(frames) -> float:
    """Precision on [0, 100]: AUC of the center-error curve over [0, 2] m."""
    if not frames:
        raise ValueError("precision_score of an empty frame list")
    err = np.array([f.center_error for f in frames])
    credit = np.clip(1.0 - err / PRECISION_MAX_ERROR, 0.0, 1.0)
    return 100.0 * float(np.mean(credit))


@dataclass
class TrackReport:
    """Per-sequence evaluation: frame records plus aggregate scores."""

    sequence_id: str
    frames: list = field(default_factory=list)
    success: float = 0.0
    precision: float = 0.0

    @classmethod
    def from_frames(cls, sequence_id: str, frames) -> "TrackReport":
        frames = list(frames)
        return cls(sequence_id, frames, success_score(frames), precision_score(frames))


def aggregate_reports(reports) -> tuple[float, float]:
    """Frame-count-weighted mean (success, precision) over reports."""
    if not reports:
        raise ValueError("aggregate_reports of an empty report list")
    weights = np.array([len(r.frames) for r in reports], dtype=float)
    succ = np.array([r.success for r in reports])
    prec = np.array([r.precision for r in reports])
    total = weights.sum()
    return float(np.dot(weights, succ) / total), float(np.dot(weights, prec) / total)


def write_report_table(reports, path) -> None:
    """TSV table, one row per sequence: id, frame count, success, precision."""
    with open(path, "w") as fh:
        fh.write("sequence_id\tn_frames\tsuccess\tprecision\n")
        for r in reports:
            fh.write(f"{r.sequence_id}\t{len(r.frames)}\t{r.success!r}\t{r.precision!r}\n")


def overlap_curve(frames, n_points: int = 101) -> np.ndarray:
    """(threshold, fraction of frames with IoU >= threshold) pairs for plotting."""
    iou = np.array([f.iou for f in frames])
    out = np.empty((n_points, 2))
    for i, t in enumerate(np.linspace(0.0, 1.0, n_points)):
        out[i, 0] = t
        out[i, 1] = float(np.mean(iou >= t)) if iou.size else 0.0
    return out


def error_curve(frames, n_points: int = 101) -> np.ndarray:
    """(threshold, fraction of frames with center error <= threshold) pairs."""
    err = np.array([f.center_error for f in frames])
    out = np.empty((n_points, 2))
    for i, t in enumerate(np.linspace(0.0, PRECISION_MAX_ERROR, n_points)):
        out[i, 0] = t
        out[i, 1] = float(np.mean(err <= t)) if err.size else 0.0
    return out


def write_curve(curve: np.ndarray, path, header: str = "threshold\tfraction") -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, frac in curve:
            fh.write(f"{t!r}\t{frac!r}\n")
