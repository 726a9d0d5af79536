"""Implicit motion model: a CVAE over box trajectories.

The model sees only past box states. Each state is the 5-feature vector
(x, y, z, sin theta, cos theta); histories are turned into per-step
displacement features, so everything downstream is invariant to where the
trajectory sits in the world. A transformer encoder summarizes the history
into a diagonal-Gaussian latent (prior head); during training a posterior
head additionally sees the ground-truth future. An autoregressive decoder
rolls the trajectory forward step by step with the sampled latent held
fixed, emitting per-step displacements that are accumulated onto the last
observed state - which makes predictions translate exactly with the input.

Decoding runs in a frame centered on the last observed position; the
returned trajectory carries the origin so absolute states come out right.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import Box3D, with_pose
from .trajformer import (
    DecoderState,
    EncoderState,
    TrajFormerConfig,
    glorot,
    run_decoder,
    run_encoder,
)

STATE_DIM = 5  # (x, y, z, sin theta, cos theta)

SERIAL_MAGIC = "trajsot-model v1"


@dataclass(frozen=True)
class TrajState:
    """One trajectory sample: position plus unit heading vector."""

    x: float
    y: float
    z: float
    sin_theta: float
    cos_theta: float

    def __post_init__(self):
        for name in ("x", "y", "z", "sin_theta", "cos_theta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        norm = self.sin_theta**2 + self.cos_theta**2
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"heading (sin, cos) not on the unit circle: norm^2={norm}")

    @classmethod
    def from_pose(cls, x, y, z, theta) -> "TrajState":
        return cls(float(x), float(y), float(z), math.sin(theta), math.cos(theta))

    @classmethod
    def from_box(cls, box: Box3D) -> "TrajState":
        return cls.from_pose(box.x, box.y, box.z, box.theta)

    @property
    def theta(self) -> float:
        return math.atan2(self.sin_theta, self.cos_theta)

    def features(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.sin_theta, self.cos_theta])


def _state_from_raw(x, y, z, s, c) -> TrajState:
    """Build a TrajState from an unnormalized (sin, cos) pair."""
    theta = math.atan2(s, c) if (s != 0.0 or c != 0.0) else 0.0
    return TrajState(float(x), float(y), float(z), math.sin(theta), math.cos(theta))


class TrajectoryHistory:
    """Ring buffer of the last observed box states plus the size reference."""

    def __init__(self, max_len: int, reference_box: Box3D, states=None):
        if max_len < 2:
            raise ValueError("history max_len must be at least 2")
        self.max_len = max_len
        self.reference_box = reference_box
        self.states = deque(states or (), maxlen=max_len)

    @classmethod
    def from_boxes(cls, boxes, max_len=None, reference_box=None) -> "TrajectoryHistory":
        boxes = list(boxes)
        hist = cls(max_len or max(len(boxes), 2), reference_box or boxes[0])
        for b in boxes:
            hist.append_box(b)
        return hist

    def append_state(self, state: TrajState) -> None:
        self.states.append(state)

    def append_box(self, box: Box3D) -> None:
        self.states.append(TrajState.from_box(box))

    def last(self) -> TrajState:
        return self.states[-1]

    def translated(self, dx, dy, dz) -> "TrajectoryHistory":
        moved = [
            TrajState(s.x + dx, s.y + dy, s.z + dz, s.sin_theta, s.cos_theta) for s in self.states
        ]
        ref = self.reference_box
        return TrajectoryHistory(
            self.max_len, with_pose(ref, ref.x + dx, ref.y + dy, ref.z + dz, ref.theta), moved
        )

    def __len__(self) -> int:
        return len(self.states)


class LatentGaussian:
    """Diagonal Gaussian over the latent code; mu and sigma are tensors."""

    def __init__(self, mu: ad.Tensor, sigma: ad.Tensor):
        if mu.value.shape != sigma.value.shape:
            raise ValueError(f"latent mu/sigma shape mismatch {mu.value.shape} vs {sigma.value.shape}")
        if np.any(sigma.value <= 0.0):
            raise ValueError("latent sigma must be strictly positive")
        if not (np.all(np.isfinite(mu.value)) and np.all(np.isfinite(sigma.value))):
            raise ValueError("latent parameters must be finite")
        self.mu = mu
        self.sigma = sigma

    @property
    def dim(self) -> int:
        return self.mu.value.size


def kl_divergence(q: LatentGaussian, p: LatentGaussian) -> ad.Tensor:
    return ad.kl_diag_gaussians(q.mu, q.sigma, p.mu, p.sigma)


def sample_latent(g: LatentGaussian, noise: np.ndarray) -> ad.Tensor:
    """Reparameterized draw z = mu + sigma * noise (differentiable)."""
    noise = np.asarray(noise, dtype=np.float64).reshape(1, -1)
    if noise.shape != g.mu.value.shape:
        raise ValueError(f"noise shape {noise.shape} does not match latent {g.mu.value.shape}")
    return ad.add(g.mu, ad.mul(g.sigma, ad.constant(noise)))


@dataclass
class PredictedTrajectory:
    """A fixed-length future: states, and (when decoded) the graph tensor.

    ``features`` holds the decoder output in the centered frame (origin at
    the last observed position); ``origin`` restores absolute coordinates.
    """

    states: list = field(default_factory=list)
    features: ad.Tensor | None = None
    origin: np.ndarray | None = None

    @classmethod
    def from_states(cls, states) -> "PredictedTrajectory":
        return cls(states=list(states))

    def __len__(self) -> int:
        return len(self.states)


def displacement_features(history: TrajectoryHistory) -> np.ndarray:
    """Per-step motion features, shape (len-1, 5).

    Row t holds the position delta from state t to t+1 plus the heading of
    the later state. Differencing removes the absolute position, so any
    translation of the whole history leaves the output unchanged.
    """
    n = len(history)
    if n < 2:
        raise ValueError(f"displacement features need at least 2 states, got {n}")
    out = np.empty((n - 1, STATE_DIM))
    states = list(history.states)
    for i in range(1, n):
        a, b = states[i - 1], states[i]
        out[i - 1] = (b.x - a.x, b.y - a.y, b.z - a.z, b.sin_theta, b.cos_theta)
    return out


def future_displacement_features(history: TrajectoryHistory, future_states) -> np.ndarray:
    """Displacement rows for a future segment, chained onto the history."""
    prev = history.last()
    out = np.empty((len(future_states), STATE_DIM))
    for i, s in enumerate(future_states):
        out[i] = (s.x - prev.x, s.y - prev.y, s.z - prev.z, s.sin_theta, s.cos_theta)
        prev = s
    return out


def centered_future_features(history: TrajectoryHistory, future_states) -> np.ndarray:
    """Future states as (T, 5) positions relative to the last observed one."""
    o = history.last()
    out = np.empty((len(future_states), STATE_DIM))
    for i, s in enumerate(future_states):
        out[i] = (s.x - o.x, s.y - o.y, s.z - o.z, s.sin_theta, s.cos_theta)
    return out


@dataclass(frozen=True)
class IMMConfig:
    """Model sizes plus the position normalization scale.

    ``feature_scale`` divides position features (and multiplies decoded
    displacements back): roughly the typical per-frame displacement in
    meters, so the network sees O(1) inputs and emits O(1) outputs.
    """

    history_len: int = 10
    future_len: int = 4
    d_latent: int = 32
    feature_scale: float = 2.5
    trajformer: TrajFormerConfig = field(default_factory=TrajFormerConfig)

    def __post_init__(self):
        if self.history_len < 2:
            raise ValueError("history_len must be at least 2")
        if self.future_len < 1:
            raise ValueError("future_len must be at least 1")
        if self.d_latent < 1:
            raise ValueError("d_latent must be at least 1")
        if self.feature_scale <= 0:
            raise ValueError("feature_scale must be positive")


class IMMModel:
    """All learnable state: embeddings, encoder, latent heads, decoder, output."""

    def __init__(self, config: IMMConfig = IMMConfig(), seed: int = 0):
        self.config = config
        cfg = config.trajformer
        d, dz = cfg.d_model, config.d_latent
        rng = np.random.default_rng(seed)

        self.input_embed_w = ad.Parameter("input_embed.w", glorot(rng, STATE_DIM, d))
        self.input_embed_b = ad.Parameter("input_embed.b", np.zeros((1, d)))
        self.segment_offset = ad.Parameter("segment_offset", np.zeros((1, d)))
        self.encoder = EncoderState("encoder", cfg, rng)

        self.prior_mu_w = ad.Parameter("prior_mu.w", glorot(rng, d, dz))
        self.prior_mu_b = ad.Parameter("prior_mu.b", np.zeros((1, dz)))
        self.prior_ls_w = ad.Parameter("prior_logsigma.w", glorot(rng, d, dz))
        self.prior_ls_b = ad.Parameter("prior_logsigma.b", np.zeros((1, dz)))
        self.post_mu_w = ad.Parameter("posterior_mu.w", glorot(rng, d, dz))
        self.post_mu_b = ad.Parameter("posterior_mu.b", np.zeros((1, dz)))
        self.post_ls_w = ad.Parameter("posterior_logsigma.w", glorot(rng, d, dz))
        self.post_ls_b = ad.Parameter("posterior_logsigma.b", np.zeros((1, dz)))

        self.state_embed_w = ad.Parameter("state_embed.w", glorot(rng, STATE_DIM, d))
        self.state_embed_b = ad.Parameter("state_embed.b", np.zeros((1, d)))
        self.fuse_w = ad.Parameter("fuse.w", glorot(rng, d + dz, d))
        self.fuse_b = ad.Parameter("fuse.b", np.zeros((1, d)))
        self.decoder = DecoderState("decoder", cfg, rng)

        self.out_w1 = ad.Parameter("out_head.w1", glorot(rng, d, cfg.d_ffn))
        self.out_b1 = ad.Parameter("out_head.b1", np.zeros((1, cfg.d_ffn)))
        self.out_w2 = ad.Parameter("out_head.w2", glorot(rng, cfg.d_ffn, STATE_DIM))
        self.out_b2 = ad.Parameter("out_head.b2", np.zeros((1, STATE_DIM)))

    def parameters(self) -> list[ad.Parameter]:
        own = [
            self.input_embed_w,
            self.input_embed_b,
            self.segment_offset,
            self.prior_mu_w,
            self.prior_mu_b,
            self.prior_ls_w,
            self.prior_ls_b,
            self.post_mu_w,
            self.post_mu_b,
            self.post_ls_w,
            self.post_ls_b,
            self.state_embed_w,
            self.state_embed_b,
            self.fuse_w,
            self.fuse_b,
            self.out_w1,
            self.out_b1,
            self.out_w2,
            self.out_b2,
        ]
        return own + self.encoder.parameters() + self.decoder.parameters()

    def zero_grad(self) -> None:
        ad.zero_gradients(self.parameters())

    # -- encoding ----------------------------------------------------------

    def _normalized(self, feats: np.ndarray) -> np.ndarray:
        out = feats.copy()
        out[:, :3] /= self.config.feature_scale
        return out

    def _embed(self, feats: np.ndarray) -> ad.Tensor:
        return ad.linear(ad.constant(self._normalized(feats)), self.input_embed_w, self.input_embed_b)

    def encode_history(self, history: TrajectoryHistory) -> ad.Tensor:
        """Encoder memory over the history's displacement rows."""
        return run_encoder(self._embed(displacement_features(history)), self.encoder, self.config.trajformer)

    def target_features(self, history: TrajectoryHistory, future_states) -> np.ndarray:
        """Ground-truth future in the decoder's frame: centered, normalized."""
        return self._normalized(centered_future_features(history, future_states))

    def _heads(self, pooled: ad.Tensor, mu_w, mu_b, ls_w, ls_b) -> LatentGaussian:
        mu = ad.linear(pooled, mu_w, mu_b)
        sigma = ad.exp(ad.linear(pooled, ls_w, ls_b))
        return LatentGaussian(mu, sigma)

    def prior_from_memory(self, memory: ad.Tensor) -> LatentGaussian:
        pooled = ad.mean_rows(memory)
        return self._heads(pooled, self.prior_mu_w, self.prior_mu_b, self.prior_ls_w, self.prior_ls_b)

    def encode_prior(self, history: TrajectoryHistory) -> LatentGaussian:
        return self.prior_from_memory(self.encode_history(history))

    def encode_posterior(self, history: TrajectoryHistory, future) -> LatentGaussian:
        """Latent conditioned on history plus the ground-truth future.

        Future displacement rows are embedded, shifted by a learned segment
        offset so the encoder can tell past from future, appended along the
        sequence axis, and encoded together with the past rows.
        """
        future_states = future.states if isinstance(future, PredictedTrajectory) else list(future)
        past = self._embed(displacement_features(history))
        fut = self._embed(future_displacement_features(history, future_states))
        fut = ad.add_bias(fut, self.segment_offset)
        joint = run_encoder(ad.concat_rows(past, fut), self.encoder, self.config.trajformer)
        pooled = ad.mean_rows(joint)
        return self._heads(pooled, self.post_mu_w, self.post_mu_b, self.post_ls_w, self.post_ls_b)

    # -- decoding ----------------------------------------------------------

    def _fuse(self, state_row: ad.Tensor, z: ad.Tensor) -> ad.Tensor:
        emb = ad.linear(state_row, self.state_embed_w, self.state_embed_b)
        return ad.linear(ad.concat_cols(emb, z), self.fuse_w, self.fuse_b)

    def _output_head(self, row: ad.Tensor) -> ad.Tensor:
        hidden = ad.relu(ad.linear(row, self.out_w1, self.out_b1))
        return ad.linear(hidden, self.out_w2, self.out_b2)

    def decode_autoregressive(
        self,
        history: TrajectoryHistory,
        z: ad.Tensor,
        steps: int,
        memory: ad.Tensor | None = None,
    ) -> PredictedTrajectory:
        """Roll the trajectory forward ``steps`` states with z held fixed.

        Works in the frame centered on the last observed position: the seed
        state is (0, 0, 0, sin, cos). Each step re-runs the decoder over the
        accumulated token sequence (with cross-attention into the encoded
        history), emits a displacement, and accumulates it onto the current
        state. The first emitted state is the current-frame prediction.
        ``memory`` lets callers reuse an already-encoded history.
        """
        if steps < 1:
            raise ValueError(f"decode steps must be >= 1, got {steps}")
        if memory is None:
            memory = self.encode_history(history)
        last = history.last()
        origin = np.array([last.x, last.y, last.z])

        current = ad.constant([[0.0, 0.0, 0.0, last.sin_theta, last.cos_theta]])
        tokens = [self._fuse(current, z)]
        predicted = []
        for t in range(steps):
            seq = tokens[0] if len(tokens) == 1 else ad.stack_rows(tokens)
            decoded = run_decoder(seq, memory, self.decoder, self.config.trajformer)
            delta = self._output_head(ad.slice_rows(decoded, t, t + 1))
            current = ad.add(current, delta)
            predicted.append(current)
            if t + 1 < steps:
                tokens.append(self._fuse(current, z))

        features = predicted[0] if steps == 1 else ad.stack_rows(predicted)
        s = self.config.feature_scale
        states = [
            _state_from_raw(r[0] * s + origin[0], r[1] * s + origin[1], r[2] * s + origin[2], r[3], r[4])
            for r in features.value
        ]
        return PredictedTrajectory(states=states, features=features, origin=origin)

    # -- inference ---------------------------------------------------------

    def predict_global_proposal(
        self,
        history: TrajectoryHistory,
        k_samples: int = 1,
        rng: np.random.Generator | None = None,
    ) -> Box3D:
        """Current-frame box predicted from the trajectory prior.

        With ``k_samples`` <= 1 the latent is the prior mean (deterministic);
        otherwise ``k_samples`` latents are drawn and the predicted positions
        and headings averaged. Sizes always come from the reference box.
        """
        memory = self.encode_history(history)
        prior = self.prior_from_memory(memory)
        if k_samples <= 1:
            draws = [prior.mu]
        else:
            if rng is None:
                raise ValueError("k_samples > 1 requires an rng")
            draws = [
                sample_latent(prior, rng.standard_normal(self.config.d_latent))
                for _ in range(k_samples)
            ]
        rows = [self.decode_autoregressive(history, z, steps=1, memory=memory).states[0] for z in draws]
        x = float(np.mean([s.x for s in rows]))
        y = float(np.mean([s.y for s in rows]))
        z_ = float(np.mean([s.z for s in rows]))
        theta = math.atan2(
            float(np.mean([s.sin_theta for s in rows])), float(np.mean([s.cos_theta for s in rows]))
        )
        return with_pose(history.reference_box, x, y, z_, theta)

    # -- serialization -----------------------------------------------------

    def save(self, path) -> None:
        """Write config and every named parameter as decimal text."""
        cfg, tf = self.config, self.config.trajformer
        lines = [SERIAL_MAGIC]
        for key, val in (
            ("history_len", cfg.history_len),
            ("future_len", cfg.future_len),
            ("d_latent", cfg.d_latent),
            ("feature_scale", repr(cfg.feature_scale)),
            ("d_model", tf.d_model),
            ("n_heads", tf.n_heads),
            ("n_layers", tf.n_layers),
            ("d_ffn", tf.d_ffn),
            ("max_len", tf.max_len),
        ):
            lines.append(f"config {key} {val}")
        for p in self.parameters():
            shape = ",".join(str(s) for s in p.value.shape)
            flat = " ".join(repr(float(v)) for v in p.value.ravel())
            lines.append(f"param {p.name} {shape} {flat}")
        lines.append("end")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "IMMModel":
        with open(path) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != SERIAL_MAGIC:
            raise ValueError(f"{path}: not a model file (missing '{SERIAL_MAGIC}' header)")
        if not lines or lines[-1] != "end":
            raise ValueError(f"{path}: truncated model file")
        cfg_vals = {}
        params = {}
        for line in lines[1:-1]:
            kind, rest = line.split(" ", 1)
            if kind == "config":
                key, val = rest.split(" ")
                cfg_vals[key] = float(val) if key == "feature_scale" else int(val)
            elif kind == "param":
                name, shape_s, flat = rest.split(" ", 2)
                shape = tuple(int(s) for s in shape_s.split(","))
                params[name] = np.array([float(v) for v in flat.split(" ")]).reshape(shape)
            else:
                raise ValueError(f"{path}: unknown record kind {kind!r}")
        config = IMMConfig(
            history_len=cfg_vals["history_len"],
            future_len=cfg_vals["future_len"],
            d_latent=cfg_vals["d_latent"],
            feature_scale=cfg_vals["feature_scale"],
            trajformer=TrajFormerConfig(
                d_model=cfg_vals["d_model"],
                n_heads=cfg_vals["n_heads"],
                n_layers=cfg_vals["n_layers"],
                d_ffn=cfg_vals["d_ffn"],
                max_len=cfg_vals["max_len"],
            ),
        )
        model = cls(config)
        own = {p.name: p for p in model.parameters()}
        missing = set(own) - set(params)
        unknown = set(params) - set(own)
        if missing or unknown:
            raise ValueError(f"{path}: parameter names do not match (missing={missing}, unknown={unknown})")
        for name, value in params.items():
            if own[name].value.shape != value.shape:
                raise ValueError(f"{path}: shape mismatch for {name}")
            own[name].value[...] = value
        return model
