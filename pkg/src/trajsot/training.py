"""Losses and the optimization loop for the implicit motion model.

The trajectory objective is a negative ELBO: unit-variance Gaussian
reconstruction (an MSE, constants dropped) plus the closed-form KL between
the posterior and prior latents. The KL weight ramps linearly from zero
over the first epochs to avoid posterior collapse. The optimizer is Adam
with decoupled weight decay and bias correction.

A Laplace likelihood with learned per-coordinate scales is provided for
supervising a learnable base-tracker head (off by default): residuals are
down-weighted by their learned scale, reducing to a scaled L1 when the
scales are frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import Box3D, wrap_angle
from .imm import (
    IMMModel,
    PredictedTrajectory,
    TrajectoryHistory,
    kl_divergence,
    sample_latent,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-4
    loss_lambda: float = 1.0
    kl_warmup_epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.loss_lambda < 0:
            raise ValueError("loss_lambda must be >= 0")
        if self.kl_warmup_epochs < 0:
            raise ValueError("kl_warmup_epochs must be >= 0")


def _as_feature_tensor(traj) -> ad.Tensor:
    if isinstance(traj, PredictedTrajectory):
        if traj.features is None:
            raise ValueError("trajectory carries no feature tensor")
        return traj.features
    if isinstance(traj, ad.Tensor):
        return traj
    return ad.constant(np.asarray(traj, dtype=np.float64))


def reconstruction_nll(predicted, target) -> ad.Tensor:
    """Unit-variance Gaussian reconstruction term.

    Mean squared error over the feature axis, summed over timesteps
    (additive constants dropped). Accepts decoded trajectories, tensors, or
    plain arrays.
    """
    pred = _as_feature_tensor(predicted)
    tgt = _as_feature_tensor(target)
    if pred.value.shape != tgt.value.shape:
        raise ValueError(f"trajectory length/width mismatch: {pred.value.shape} vs {tgt.value.shape}")
    diff = ad.sub(pred, tgt)
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / pred.value.shape[1])


@dataclass
class ElboParts:
    total: ad.Tensor
    recon: ad.Tensor
    kl: ad.Tensor


def elbo_loss(
    history: TrajectoryHistory,
    gt_future,
    model: IMMModel,
    noise: np.ndarray,
    tie_posterior_to_prior: bool = False,
) -> ElboParts:
    """Negative ELBO of one (history, future) pair, with components.

    Encodes the posterior, draws a reparameterized latent with the given
    noise, decodes, and scores reconstruction plus KL(q || p). The
    ``tie_posterior_to_prior`` hook replaces q by p (used by tests to pin
    the KL term at exactly zero).
    """
    future_states = gt_future.states if isinstance(gt_future, PredictedTrajectory) else list(gt_future)
    memory = model.encode_history(history)
    prior = model.prior_from_memory(memory)
    posterior = prior if tie_posterior_to_prior else model.encode_posterior(history, future_states)
    z = sample_latent(posterior, noise)
    decoded = model.decode_autoregressive(history, z, steps=len(future_states), memory=memory)
    target = model.target_features(history, future_states)
    recon = reconstruction_nll(decoded, target)
    kl = kl_divergence(posterior, prior)
    return ElboParts(ad.add(recon, kl), recon, kl)


def tracking_loss(proposal: Box3D, gt: Box3D, log_scale: ad.Parameter) -> ad.Tensor:
    """Laplace NLL of the proposal residual with learned per-coordinate scales.

    Residuals are (dx, dy, dz, dtheta-on-the-circle); the loss is
    sum(|e_i| / s_i + log s_i) with s = exp(log_scale). Its minimum over
    the scales sits at s_i = |e_i|.
    """
    if log_scale.value.size != 4:
        raise ValueError("log_scale must have 4 entries (x, y, z, theta)")
    residual = np.array(
        [proposal.x - gt.x, proposal.y - gt.y, proposal.z - gt.z, wrap_angle(proposal.theta - gt.theta)]
    ).reshape(log_scale.value.shape)
    e = ad.constant(np.abs(residual))
    inv_s = ad.exp(ad.scale(log_scale, -1.0))
    return ad.sum_all(ad.add(ad.mul(e, inv_s), log_scale))


def total_loss(tracking, traj, loss_lambda: float):
    """Weighted sum of the two stage losses: tracking + lambda * trajectory."""
    if isinstance(tracking, ad.Tensor) or isinstance(traj, ad.Tensor):
        tracking = tracking if isinstance(tracking, ad.Tensor) else ad.constant(tracking)
        traj = traj if isinstance(traj, ad.Tensor) else ad.constant(traj)
        return ad.add(tracking, ad.scale(traj, loss_lambda))
    return tracking + loss_lambda * traj


class AdamW:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        ad.zero_gradients(self.params)

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update


def kl_weight(epoch_index: int, warmup_epochs: int) -> float:
    """Linear KL ramp: 0 at epoch 0, reaching 1 after ``warmup_epochs``."""
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, epoch_index / warmup_epochs)


def truncate_history(history: TrajectoryHistory, length: int) -> TrajectoryHistory:
    """A view of the most recent ``length`` states (same reference box)."""
    if length < 2:
        raise ValueError("truncated history must keep at least 2 states")
    states = list(history.states)[-length:]
    return TrajectoryHistory(history.max_len, history.reference_box, states)


def augment_short_histories(pairs, fraction: float, rng: np.random.Generator):
    """Add truncated-history copies of a fraction of the training pairs.

    Tracking at inference time starts from short histories; training on
    truncated windows keeps the prior well-behaved there too.
    """
    extra = []
    for history, future in pairs:
        if len(history) > 2 and rng.random() < fraction:
            length = int(rng.integers(2, len(history)))
            extra.append((truncate_history(history, length), future))
    return list(pairs) + extra


def train(pairs, model: IMMModel, cfg: TrainConfig = TrainConfig()):
    """Optimize the model on (history, future) windows; returns the loss log.

    Mini-batches are reshuffled every epoch from the seeded stream; each
    batch accumulates per-sample gradients (scaled by the batch size) into
    one optimizer step. The log holds one row per epoch:
    (epoch, mean ELBO, mean reconstruction, mean KL).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), lr=cfg.learning_rate)
    d_latent = model.config.d_latent

    log = []
    for epoch in range(cfg.epochs):
        beta = kl_weight(epoch, cfg.kl_warmup_epochs)
        order = rng.permutation(len(pairs))
        sums = np.zeros(3)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            inv = 1.0 / len(batch)
            for idx in batch:
                history, future = pairs[idx]
                noise = rng.standard_normal(d_latent)
                parts = elbo_loss(history, future, model, noise)
                objective = ad.scale(ad.add(parts.recon, ad.scale(parts.kl, beta)), inv)
                if not np.isfinite(objective.value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}")
                ad.backward(objective)
                sums += (float(parts.total.value), float(parts.recon.value), float(parts.kl.value))
            opt.step()
        log.append((epoch + 1, *(sums / len(pairs))))
    return log


def write_loss_log(log, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch\ttotal\trecon\tkl\n")
        for epoch, total, recon, kl in log:
            fh.write(f"{epoch}\t{total!r}\t{recon!r}\t{kl!r}\n")
