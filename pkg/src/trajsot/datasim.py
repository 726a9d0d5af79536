"""Synthetic trajectory scenarios, occlusion injection, windowing, and I/O.

Scenarios are kinematic rollouts (constant velocity, constant acceleration,
circular turn, stop-and-go) with the box heading aligned to the velocity
direction. Start pose and box size are randomized from the seed; speed,
turn rate, and frame spacing come straight from the config so every kind
obeys its closed form exactly when noise is zero. Ground-truth jitter is
planar Gaussian noise on (x, y).

Datasets are stored one JSON object per line::

    {"sequence_id": "...", "frames": [{"frame": 0,
        "box": [x, y, z, h, w, l, theta], "occluded": false}, ...]}

written compactly (separators ``,`` and ``:``) with Python float repr, so
files are diffable, stream line by line, and round-trip value-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box3D, wrap_angle
from .imm import TrajectoryHistory, TrajState

KINDS = ("constant-velocity", "constant-acceleration", "turn", "stop-and-go")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "constant-velocity"
    duration: int = 40
    dt: float = 0.5
    speed: float = 5.0
    turn_rate: float = 0.3
    noise_sigma: float = 0.0
    heading_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}, expected one of {KINDS}")
        if self.duration < 2:
            raise ValueError("duration must be at least 2 frames")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.speed < 0 or self.noise_sigma < 0 or self.heading_jitter < 0:
            raise ValueError("speed, noise_sigma, and heading_jitter must be >= 0")
        if self.kind == "turn" and self.turn_rate == 0.0:
            raise ValueError("turn scenarios need a nonzero turn_rate")


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    box: Box3D
    occluded: bool = False


@dataclass
class SequenceRecord:
    sequence_id: str
    frames: list

    def __post_init__(self):
        for i, rec in enumerate(self.frames):
            if rec.frame != i:
                raise ValueError(f"sequence {self.sequence_id!r}: frame indices must be contiguous from 0")


def stop_go_phase(cfg: ScenarioConfig) -> int:
    """Frames per stop-and-go phase: roughly two seconds of motion."""
    return max(2, int(round(2.0 / cfg.dt)))


def _path(cfg: ScenarioConfig, start: np.ndarray, heading0: float):
    """Noise-free centers and headings for every frame."""
    t = np.arange(cfg.duration, dtype=np.float64)
    headings = np.full(cfg.duration, heading0)
    xs = np.full(cfg.duration, start[0])
    ys = np.full(cfg.duration, start[1])
    dirx, diry = math.cos(heading0), math.sin(heading0)

    if cfg.kind == "constant-velocity":
        dist = cfg.speed * cfg.dt * t
        xs = start[0] + dirx * dist
        ys = start[1] + diry * dist
    elif cfg.kind == "constant-acceleration":
        accel = cfg.speed / (cfg.duration * cfg.dt)
        tau = t * cfg.dt
        dist = cfg.speed * tau + 0.5 * accel * tau * tau
        xs = start[0] + dirx * dist
        ys = start[1] + diry * dist
    elif cfg.kind == "turn":
        radius = cfg.speed / cfg.turn_rate
        theta_t = heading0 + cfg.turn_rate * cfg.dt * t
        xs = start[0] + radius * (np.sin(theta_t) - math.sin(heading0))
        ys = start[1] - radius * (np.cos(theta_t) - math.cos(heading0))
        headings = theta_t
    else:  # stop-and-go
        phase = stop_go_phase(cfg)
        moving = ((np.arange(cfg.duration) // phase) % 2) == 0
        steps = np.concatenate([[0.0], np.cumsum(moving[:-1].astype(float))])
        dist = cfg.speed * cfg.dt * steps
        xs = start[0] + dirx * dist
        ys = start[1] + diry * dist

    return xs, ys, np.full(cfg.duration, start[2]), headings


def generate_scenario(cfg: ScenarioConfig, sequence_id: str | None = None) -> SequenceRecord:
    """Deterministic (per seed) rollout of one scenario."""
    rng = np.random.default_rng(cfg.seed)
    heading0 = rng.uniform(-math.pi, math.pi)
    start = np.array([rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0), rng.uniform(-1.0, 1.0)])
    length = rng.uniform(3.8, 5.2)
    width = rng.uniform(1.7, 2.1)
    height = rng.uniform(1.4, 1.8)

    xs, ys, zs, headings = _path(cfg, start, heading0)
    if cfg.noise_sigma > 0:
        jitter = rng.normal(0.0, cfg.noise_sigma, size=(cfg.duration, 2))
        xs = xs + jitter[:, 0]
        ys = ys + jitter[:, 1]
    if cfg.heading_jitter > 0:
        headings = headings + rng.normal(0.0, cfg.heading_jitter, size=cfg.duration)

    frames = [
        FrameRecord(i, Box3D(xs[i], ys[i], zs[i], height, width, length, wrap_angle(headings[i])))
        for i in range(cfg.duration)
    ]
    return SequenceRecord(sequence_id or f"{cfg.kind}-{cfg.seed}", frames)


def mirror_sequence(seq: SequenceRecord, suffix: str = "-mirror") -> SequenceRecord:
    """Horizontal mirror (y and heading negated): cheap augmentation."""
    frames = [
        FrameRecord(r.frame, Box3D(r.box.x, -r.box.y, r.box.z, r.box.h, r.box.w, r.box.l, -r.box.theta), r.occluded)
        for r in seq.frames
    ]
    return SequenceRecord(seq.sequence_id + suffix, frames)


def mark_occlusions(seq: SequenceRecord, rate: float, burst_len: int, seed: int) -> SequenceRecord:
    """Flag contiguous occlusion bursts covering about ``rate`` of the frames.

    Frame 0 (the initialization frame) is never flagged. The per-frame
    burst-start probability is solved so the expected flagged fraction
    equals ``rate`` for any burst length.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("occlusion rate must be in [0, 1]")
    if burst_len < 1:
        raise ValueError("burst_len must be at least 1")
    flags = [False] * len(seq.frames)
    if rate > 0:
        q = rate / (burst_len * (1.0 - rate) + rate)
        rng = np.random.default_rng(seed)
        i = 1
        while i < len(flags):
            if rng.random() < q:
                for j in range(i, min(i + burst_len, len(flags))):
                    flags[j] = True
                i += burst_len
            else:
                i += 1
    frames = [replace(rec, occluded=flag) for rec, flag in zip(seq.frames, flags)]
    return SequenceRecord(seq.sequence_id, frames)


def windows(seq: SequenceRecord, history_len: int, future_len: int, stride: int = 1):
    """Sliding (history, future) training pairs from ground truth.

    Histories hold ``history_len`` consecutive states; the future holds the
    next ``future_len``. Sequences shorter than one window yield an empty
    list. The last history frame is immediately followed by the first
    future frame (no gap, no overlap).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    span = history_len + future_len
    out = []
    for start in range(0, len(seq.frames) - span + 1, stride):
        hist_frames = seq.frames[start:start + history_len]
        fut_frames = seq.frames[start + history_len:start + span]
        history = TrajectoryHistory(
            history_len,
            hist_frames[-1].box,
            [TrajState.from_box(r.box) for r in hist_frames],
        )
        future = [TrajState.from_box(r.box) for r in fut_frames]
        out.append((history, future))
    return out


class DatasetFormatError(ValueError):
    """A dataset file line that does not parse or match the schema."""


def _record_to_obj(seq: SequenceRecord) -> dict:
    return {
        "sequence_id": seq.sequence_id,
        "frames": [
            {
                "frame": r.frame,
                "box": [r.box.x, r.box.y, r.box.z, r.box.h, r.box.w, r.box.l, r.box.theta],
                "occluded": r.occluded,
            }
            for r in seq.frames
        ],
    }


def save_dataset(records, path) -> None:
    """Write one JSON object per line (schema in the module docstring)."""
    with open(path, "w") as fh:
        for seq in records:
            fh.write(json.dumps(_record_to_obj(seq), separators=(",", ":")) + "\n")


def load_dataset(path):
    """Read a line-delimited dataset; errors name the offending line."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                frames = [
                    FrameRecord(f["frame"], Box3D(*f["box"]), bool(f["occluded"]))
                    for f in obj["frames"]
                ]
                out.append(SequenceRecord(obj["sequence_id"], frames))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from exc
    return out
