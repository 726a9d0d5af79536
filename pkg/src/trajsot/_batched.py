"""Batched ELBO forward pass: one tape graph per mini-batch.

Semantically identical to summing `training.elbo_loss` over the batch (a
property test pins the equivalence), but stacks every sample's rows into
shared tensors so tape and numpy overhead are paid per batch instead of
per sample. Independence between samples is enforced by additive attention
masks: rows may only attend to rows of the same sample.

Layouts: history and future rows are sample-major (all of sample 0, then
sample 1, ...); decoder tokens are step-major (all samples' token 0, then
token 1, ...) so the plain triangular causal mask combined with the
same-sample mask yields per-sample causality.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .imm import IMMModel, STATE_DIM, displacement_features, future_displacement_features
from .trajformer import MASK_VALUE, run_decoder, run_encoder


def _same_sample_mask(q_ids: np.ndarray, k_ids: np.ndarray) -> np.ndarray:
    return np.where(q_ids[:, None] == k_ids[None, :], 0.0, MASK_VALUE)


def batched_elbo_sums(model: IMMModel, pairs, noises: np.ndarray):
    """Summed (total, recon, kl) tensors over a batch of (history, future).

    ``noises`` holds one standard-normal row per sample. Returned tensors
    are sums over the batch; divide by the batch size for means.
    """
    cfg = model.config
    tf = cfg.trajformer
    n = len(pairs)
    if n == 0:
        raise ValueError("batched_elbo_sums needs a non-empty batch")
    if noises.shape != (n, cfg.d_latent):
        raise ValueError(f"noises must be ({n}, {cfg.d_latent}), got {noises.shape}")

    past_feats = [model._normalized(displacement_features(h)) for h, _ in pairs]
    fut_feats = [model._normalized(future_displacement_features(h, f)) for h, f in pairs]
    past_lens = [f.shape[0] for f in past_feats]
    fut_lens = [f.shape[0] for f in fut_feats]

    past_ids = np.repeat(np.arange(n), past_lens)
    fut_ids = np.repeat(np.arange(n), fut_lens)
    past_pos = np.concatenate([np.arange(m) for m in past_lens])
    fut_pos = np.concatenate([np.arange(lp, lp + lf) for lp, lf in zip(past_lens, fut_lens)])

    emb_past = ad.linear(ad.constant(np.vstack(past_feats)), model.input_embed_w, model.input_embed_b)
    memory = run_encoder(
        emb_past, model.encoder, tf, positions=past_pos, extra_mask=_same_sample_mask(past_ids, past_ids)
    )
    prior = model._heads(
        ad.group_mean_rows(memory, past_ids, n),
        model.prior_mu_w, model.prior_mu_b, model.prior_ls_w, model.prior_ls_b,
    )

    emb_fut = ad.add_bias(
        ad.linear(ad.constant(np.vstack(fut_feats)), model.input_embed_w, model.input_embed_b),
        model.segment_offset,
    )
    joint_ids = np.concatenate([past_ids, fut_ids])
    joint = run_encoder(
        ad.concat_rows(emb_past, emb_fut),
        model.encoder,
        tf,
        positions=np.concatenate([past_pos, fut_pos]),
        extra_mask=_same_sample_mask(joint_ids, joint_ids),
    )
    posterior = model._heads(
        ad.group_mean_rows(joint, joint_ids, n),
        model.post_mu_w, model.post_mu_b, model.post_ls_w, model.post_ls_b,
    )

    z = ad.add(posterior.mu, ad.mul(posterior.sigma, ad.constant(noises)))

    # step-major autoregressive rollout over the whole batch
    steps = len(pairs[0][1])
    if any(len(f) != steps for _, f in pairs):
        raise ValueError("all futures in a batch must share one length")
    seeds = np.zeros((n, 5))
    for i, (h, _) in enumerate(pairs):
        last = h.last()
        seeds[i, 3] = last.sin_theta
        seeds[i, 4] = last.cos_theta
    current = ad.constant(seeds)
    tokens = [model._fuse(current, z)]
    predicted = []
    token_ids = np.tile(np.arange(n), steps)
    cross_full = _same_sample_mask(token_ids, past_ids)
    token_pos_full = np.repeat(np.arange(steps), n)
    for t in range(steps):
        seq = tokens[0] if len(tokens) == 1 else ad.stack_rows(tokens)
        rows = n * (t + 1)
        decoded = run_decoder(
            seq,
            memory,
            model.decoder,
            tf,
            y_positions=token_pos_full[:rows],
            m_positions=past_pos,
            self_extra_mask=_same_sample_mask(token_ids[:rows], token_ids[:rows]),
            cross_mask=cross_full[:rows],
        )
        delta = model._output_head(ad.slice_rows(decoded, t * n, (t + 1) * n))
        current = ad.add(current, delta)
        predicted.append(current)
        if t + 1 < steps:
            tokens.append(model._fuse(current, z))

    pred = predicted[0] if steps == 1 else ad.stack_rows(predicted)
    targets = np.vstack([model.target_features(h, f) for h, f in pairs])  # sample-major
    # rearrange sample-major targets (i*steps + s) into step-major (s*n + i)
    order = (np.arange(n * steps).reshape(n, steps).T).ravel()
    target_block = targets[order]
    diff = ad.sub(pred, ad.constant(target_block))
    recon = ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / STATE_DIM)
    kl = ad.kl_diag_gaussians(posterior.mu, posterior.sigma, prior.mu, prior.sigma)
    return ad.add(recon, kl), recon, kl
