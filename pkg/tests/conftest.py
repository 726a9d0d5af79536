"""Shared fixtures and independent oracles used across the test suite.

The oracles here deliberately avoid the code paths they check: IoU is
verified by point sampling (no polygon clipping), gradients by central
finite differences (no tape), KL by numerical quadrature (no closed form).
"""

import math

import numpy as np
import pytest

from trajsot import autodiff as ad
from trajsot.geometry import Box3D, bev_corners
from trajsot.imm import IMMConfig, IMMModel, TrajectoryHistory, TrajState
from trajsot.trajformer import TrajFormerConfig


# ---------------------------------------------------------------------------
# Monte Carlo IoU oracle


def points_inside(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Vectorized point-in-rotated-rectangle test (BEV)."""
    dx = points[:, 0] - box.x
    dy = points[:, 1] - box.y
    c, s = math.cos(box.theta), math.sin(box.theta)
    local_x = c * dx + s * dy
    local_y = -s * dx + c * dy
    return (np.abs(local_x) <= 0.5 * box.l) & (np.abs(local_y) <= 0.5 * box.w)


def mc_bev_iou(a: Box3D, b: Box3D, n_samples: int = 10**6, seed: int = 0) -> float:
    """IoU estimated by uniform sampling over the joint bounding rectangle."""
    rng = np.random.default_rng(seed)
    corners = np.vstack([bev_corners(a), bev_corners(b)])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n_samples, 2))
    in_a = points_inside(pts, a)
    in_b = points_inside(pts, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def random_box(rng: np.random.Generator, center_scale: float = 10.0) -> Box3D:
    return Box3D(
        rng.uniform(-center_scale, center_scale),
        rng.uniform(-center_scale, center_scale),
        rng.uniform(-2.0, 2.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(0.5, 5.0),
        rng.uniform(-math.pi, math.pi),
    )


def random_overlapping_pair(rng: np.random.Generator) -> tuple[Box3D, Box3D]:
    """A random box and a near neighbor, so IoU is usually nontrivial."""
    a = random_box(rng)
    b = Box3D(
        a.x + rng.normal(0.0, 0.8),
        a.y + rng.normal(0.0, 0.8),
        a.z + rng.normal(0.0, 0.3),
        max(a.h + rng.normal(0.0, 0.2), 0.3),
        max(a.w + rng.normal(0.0, 0.3), 0.3),
        max(a.l + rng.normal(0.0, 0.4), 0.3),
        a.theta + rng.normal(0.0, 0.6),
    )
    return a, b


# ---------------------------------------------------------------------------
# finite-difference gradient oracle

FD_STEP = 1e-5
FD_REL_TOL = 1e-4
FD_MIN_MAG = 1e-6


def finite_difference_check(
    build_loss,
    params,
    step: float = FD_STEP,
    rel_tol: float = FD_REL_TOL,
    min_mag: float = FD_MIN_MAG,
    max_elements_per_param: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Compare tape gradients against central finite differences.

    ``build_loss`` must rebuild the scalar loss from the parameters' current
    values on every call. Disagreements raise with the parameter name and
    flat index. ``max_elements_per_param`` subsamples large parameters.
    """
    for p in params:
        p.zero_grad()
    ad.backward(build_loss())
    analytic = {p.name: p.grad.copy() for p in params}

    for p in params:
        flat = p.value.ravel()
        grad = analytic[p.name].ravel()
        indices = range(flat.size)
        if max_elements_per_param is not None and flat.size > max_elements_per_param:
            indices = (rng or np.random.default_rng(0)).choice(
                flat.size, size=max_elements_per_param, replace=False
            )
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            f_plus = float(build_loss().value)
            flat[i] = original - step
            f_minus = float(build_loss().value)
            flat[i] = original
            fd = (f_plus - f_minus) / (2.0 * step)
            ref = max(abs(fd), abs(grad[i]))
            if ref > min_mag:
                err = abs(fd - grad[i]) / ref
                assert err < rel_tol, (
                    f"{p.name}[{i}]: finite difference {fd} vs tape {grad[i]} (rel err {err:.2e})"
                )


# ---------------------------------------------------------------------------
# KL quadrature oracle


def kl_quadrature(mu_q, sigma_q, mu_p, sigma_p) -> float:
    """Per-dimension numerical integration of q * log(q / p)."""
    from scipy import integrate

    total = 0.0
    for uq, sq, up, sp in zip(np.ravel(mu_q), np.ravel(sigma_q), np.ravel(mu_p), np.ravel(sigma_p)):
        def integrand(x, uq=uq, sq=sq, up=up, sp=sp):
            log_q = -0.5 * ((x - uq) / sq) ** 2 - math.log(sq * math.sqrt(2 * math.pi))
            log_p = -0.5 * ((x - up) / sp) ** 2 - math.log(sp * math.sqrt(2 * math.pi))
            return math.exp(log_q) * (log_q - log_p)

        val, _ = integrate.quad(integrand, uq - 14 * sq, uq + 14 * sq, limit=200)
        total += val
    return total


# ---------------------------------------------------------------------------
# tiny model fixtures


def tiny_imm_config() -> IMMConfig:
    return IMMConfig(
        history_len=5,
        future_len=2,
        d_latent=4,
        trajformer=TrajFormerConfig(d_model=8, n_heads=2, n_layers=1, d_ffn=16),
    )


@pytest.fixture
def tiny_model() -> IMMModel:
    return IMMModel(tiny_imm_config(), seed=7)


def make_history(rng: np.random.Generator, n_states: int = 5, max_len: int = 10) -> TrajectoryHistory:
    ref = random_box(rng)
    states = []
    x, y, z = ref.x, ref.y, ref.z
    theta = ref.theta
    for _ in range(n_states):
        states.append(TrajState.from_pose(x, y, z, theta))
        x += rng.normal(1.0, 0.3)
        y += rng.normal(0.5, 0.3)
        z += rng.normal(0.0, 0.05)
        theta += rng.normal(0.0, 0.1)
    return TrajectoryHistory(max_len, ref, states)


def make_future(rng: np.random.Generator, history: TrajectoryHistory, n_states: int = 2):
    last = history.last()
    x, y, z = last.x, last.y, last.z
    theta = last.theta
    out = []
    for _ in range(n_states):
        x += rng.normal(1.0, 0.3)
        y += rng.normal(0.5, 0.3)
        z += rng.normal(0.0, 0.05)
        theta += rng.normal(0.0, 0.1)
        out.append(TrajState.from_pose(x, y, z, theta))
    return out
