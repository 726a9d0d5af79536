"""Unified run configuration: defaults, JSON file loading, flag overrides.

One JSON file configures every command, with one section per subsystem::

    {
      "model":   {"history_len": 10, "future_len": 4, "d_latent": 32,
                  "feature_scale": 2.5, "d_model": 64, "n_heads": 4,
                  "n_layers": 2, "d_ffn": 128, "max_len": 512},
      "refine":  {"iou_threshold": 0.3, "warmup_mode": "local-only"},
      "train":   {"epochs": 20, "batch_size": 32, "learning_rate": 1e-4,
                  "loss_lambda": 1.0, "kl_warmup_epochs": 5, "seed": 0},
      "tracker": {"variant": "oracle", "noise_sigma": 0.15,
                  "failure_rate": 0.2, "failure_offset": 3.0},
      "sim":     {"n_train": 700, "n_val": 150, "duration": 40,
                  "val_duration": 40, "dt": 0.5,
                  "speed": 5.0, "turn_rate": 0.3, "noise_sigma": 0.1,
                  "kinds": ["constant-velocity", "turn", "stop-and-go"],
                  "seed": 0},
      "window_stride": 1, "short_history_fraction": 0.0,
      "mirror_augment": false, "k_samples": 1, "threads": 1
    }

Anything omitted keeps its default; unknown keys are rejected. Command-line
flags override file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .imm import IMMConfig
from .pipeline import RefinementConfig
from .trackers import BaseTrackerKind
from .trajformer import TrajFormerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


@dataclass(frozen=True)
class SimConfig:
    n_train: int = 700
    n_val: int = 150
    duration: int = 40
    val_duration: int | None = None  # defaults to ``duration``
    dt: float = 0.5
    speed: float = 5.0
    turn_rate: float = 0.3
    noise_sigma: float = 0.1
    kinds: tuple = ("constant-velocity", "turn", "stop-and-go")
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 0 or self.n_val < 0:
            raise ConfigError("sequence counts must be >= 0")
        object.__setattr__(self, "kinds", tuple(self.kinds))


@dataclass(frozen=True)
class RunConfig:
    model: IMMConfig = field(default_factory=IMMConfig)
    refine: RefinementConfig = field(default_factory=RefinementConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: BaseTrackerKind = field(default_factory=BaseTrackerKind)
    sim: SimConfig = field(default_factory=SimConfig)
    window_stride: int = 1
    short_history_fraction: float = 0.0
    mirror_augment: bool = False
    k_samples: int = 1
    threads: int = 1


_MODEL_KEYS = ("history_len", "future_len", "d_latent", "feature_scale")
_TRAJFORMER_KEYS = ("d_model", "n_heads", "n_layers", "d_ffn", "max_len")
_TOP_KEYS = ("model", "refine", "train", "tracker", "sim", "window_stride",
             "short_history_fraction", "mirror_augment", "k_samples", "threads")


def _build_section(cls, data: dict, section: str):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def _model_config(data: dict) -> IMMConfig:
    unknown = set(data) - set(_MODEL_KEYS) - set(_TRAJFORMER_KEYS)
    if unknown:
        raise ConfigError(f"section 'model': unknown keys {sorted(unknown)}")
    tf = _build_section(TrajFormerConfig, {k: data[k] for k in _TRAJFORMER_KEYS if k in data}, "model")
    return _build_section(
        IMMConfig, {**{k: data[k] for k in _MODEL_KEYS if k in data}, "trajformer": tf}, "model"
    )


def run_config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {}
    if "model" in data:
        kwargs["model"] = _model_config(dict(data["model"]))
    if "refine" in data:
        kwargs["refine"] = _build_section(RefinementConfig, data["refine"], "refine")
    if "train" in data:
        kwargs["train"] = _build_section(TrainConfig, data["train"], "train")
    if "tracker" in data:
        kwargs["tracker"] = _build_section(BaseTrackerKind, data["tracker"], "tracker")
    if "sim" in data:
        kwargs["sim"] = _build_section(SimConfig, data["sim"], "sim")
    for key in ("window_stride", "short_history_fraction", "mirror_augment", "k_samples", "threads"):
        if key in data:
            kwargs[key] = data[key]
    return RunConfig(**kwargs)


def load_run_config(path=None) -> RunConfig:
    """RunConfig from a JSON file, or pure defaults when no path given."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return run_config_from_dict(data)


def override(cfg: RunConfig, **updates) -> RunConfig:
    """Functional update helper for flag overrides (None values ignored)."""
    updates = {k: v for k, v in updates.items() if v is not None}
    section_updates = {}
    for dotted in [k for k in updates if "." in k]:
        section, key = dotted.split(".", 1)
        section_updates.setdefault(section, {})[key] = updates.pop(dotted)
    for section, fields in section_updates.items():
        try:
            updates[section] = replace(getattr(cfg, section), **fields)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return replace(cfg, **updates)
