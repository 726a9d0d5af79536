import math

import numpy as np
import pytest

from trajsot import autodiff as ad
from trajsot.geometry import Box3D
from trajsot.imm import (
    IMMModel,
    LatentGaussian,
    TrajectoryHistory,
    TrajState,
    centered_future_features,
    displacement_features,
    kl_divergence,
    sample_latent,
)
from trajsot.training import elbo_loss

from conftest import make_future, make_history, tiny_imm_config


def straight_history(n=5, step=(1.0, 0.0, 0.0), theta=0.0, max_len=10):
    ref = Box3D(0, 0, 0, 1.5, 1.9, 4.5, theta)
    states = [
        TrajState.from_pose(i * step[0], i * step[1], i * step[2], theta) for i in range(n)
    ]
    return TrajectoryHistory(max_len, ref, states)


class TestTrajState:
    def test_unit_circle_enforced(self):
        with pytest.raises(ValueError):
            TrajState(0, 0, 0, 0.5, 0.5)

    def test_from_pose_roundtrip(self):
        s = TrajState.from_pose(1, 2, 3, 2.5)
        assert s.theta == pytest.approx(2.5)
        np.testing.assert_allclose(s.features(), [1, 2, 3, math.sin(2.5), math.cos(2.5)])


class TestTrajectoryHistory:
    def test_ring_buffer_evicts_oldest(self):
        hist = straight_history(n=3, max_len=3)
        hist.append_state(TrajState.from_pose(9, 9, 9, 0))
        assert len(hist) == 3
        assert hist.states[0].x == 1.0
        assert hist.last().x == 9.0

    def test_min_capacity(self):
        with pytest.raises(ValueError):
            TrajectoryHistory(1, Box3D(0, 0, 0, 1, 1, 1, 0))


class TestDisplacementFeatures:
    def test_static_history_zero_motion(self):
        feats = displacement_features(straight_history(n=4, step=(0, 0, 0), theta=0.7))
        np.testing.assert_array_equal(feats[:, :3], 0.0)
        np.testing.assert_allclose(feats[:, 3], math.sin(0.7))
        np.testing.assert_allclose(feats[:, 4], math.cos(0.7))

    def test_constant_velocity_rows(self):
        feats = displacement_features(straight_history(n=5, step=(1.0, 0.0, 0.0)))
        assert feats.shape == (4, 5)
        np.testing.assert_allclose(feats[:, 0], 1.0)
        np.testing.assert_allclose(feats[:, 1:3], 0.0)

    def test_translation_invariance_exact(self):
        rng = np.random.default_rng(0)
        hist = make_history(rng, n_states=6)
        feats = displacement_features(hist)
        moved = displacement_features(hist.translated(123.4, -56.7, 8.9))
        # the shift is added before the difference, so cancellation is exact
        # only up to float rounding of the shifted coordinates
        np.testing.assert_allclose(moved, feats, atol=1e-12)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            displacement_features(straight_history(n=1))


class TestLatentHeads:
    @pytest.mark.parametrize("n_states", [3, 5])
    def test_prior_shape_and_positive_sigma(self, tiny_model, n_states):
        rng = np.random.default_rng(1)
        g = tiny_model.encode_prior(make_history(rng, n_states=n_states))
        assert g.mu.value.shape == (1, 4)
        assert g.sigma.value.shape == (1, 4)
        assert np.all(g.sigma.value > 0)

    def test_prior_translation_invariant(self, tiny_model):
        rng = np.random.default_rng(2)
        hist = make_history(rng, n_states=5)
        a = tiny_model.encode_prior(hist)
        b = tiny_model.encode_prior(hist.translated(50.0, -20.0, 3.0))
        np.testing.assert_allclose(b.mu.value, a.mu.value, atol=1e-9)
        np.testing.assert_allclose(b.sigma.value, a.sigma.value, atol=1e-9)

    def test_posterior_shape_and_positive_sigma(self, tiny_model):
        rng = np.random.default_rng(3)
        hist = make_history(rng, n_states=5)
        future = make_future(rng, hist, n_states=2)
        g = tiny_model.encode_posterior(hist, future)
        assert g.mu.value.shape == (1, 4)
        assert np.all(g.sigma.value > 0)

    def test_latent_gaussian_validation(self):
        with pytest.raises(ValueError):
            LatentGaussian(ad.constant([[0.0, 0.0]]), ad.constant([[1.0, -1.0]]))
        with pytest.raises(ValueError):
            LatentGaussian(ad.constant([[0.0]]), ad.constant([[1.0, 1.0]]))


class TestSampleLatent:
    def test_zero_noise_gives_mean(self):
        g = LatentGaussian(ad.constant([[1.0, -2.0]]), ad.constant([[0.5, 3.0]]))
        z = sample_latent(g, np.zeros(2))
        np.testing.assert_array_equal(z.value, [[1.0, -2.0]])

    def test_vanishing_sigma_limit(self):
        g = LatentGaussian(ad.constant([[1.0, -2.0]]), ad.constant([[1e-300, 1e-300]]))
        z = sample_latent(g, np.array([5.0, -7.0]))
        np.testing.assert_allclose(z.value, [[1.0, -2.0]])

    def test_dimension_mismatch(self):
        g = LatentGaussian(ad.constant([[0.0, 0.0]]), ad.constant([[1.0, 1.0]]))
        with pytest.raises(ValueError):
            sample_latent(g, np.zeros(3))

    def test_empirical_mean(self):
        rng = np.random.default_rng(4)
        mu = rng.normal(size=(1, 32))
        g = LatentGaussian(ad.constant(mu), ad.constant(np.ones((1, 32))))
        draws = np.vstack([sample_latent(g, rng.standard_normal(32)).value for _ in range(10**5)])
        assert np.abs(draws.mean(axis=0) - mu.ravel()).max() < 0.02

    def test_reparameterization_gradients(self):
        mu = ad.Parameter("mu", np.array([[0.3, -0.4]]))
        log_s = ad.Parameter("ls", np.array([[0.1, 0.2]]))
        noise = np.array([1.5, -2.5])
        g = LatentGaussian(mu, ad.exp(log_s))
        ad.backward(ad.sum_all(sample_latent(g, noise)))
        np.testing.assert_allclose(mu.grad, [[1.0, 1.0]])
        np.testing.assert_allclose(log_s.grad, noise.reshape(1, -1) * np.exp(log_s.value))


class TestDecoder:
    @pytest.mark.parametrize("steps", [1, 4, 8])
    def test_output_length(self, tiny_model, steps):
        rng = np.random.default_rng(5)
        hist = make_history(rng, n_states=5)
        z = ad.constant(np.zeros((1, 4)))
        traj = tiny_model.decode_autoregressive(hist, z, steps)
        assert len(traj) == steps
        assert traj.features.value.shape == (steps, 5)

    def test_zero_output_head_holds_last_state(self, tiny_model):
        tiny_model.out_w2.value[...] = 0.0
        tiny_model.out_b2.value[...] = 0.0
        hist = straight_history(n=5, step=(1.0, 0.5, 0.0), theta=0.3)
        z = ad.constant(np.zeros((1, 4)))
        traj = tiny_model.decode_autoregressive(hist, z, 4)
        last = hist.last()
        for s in traj.states:
            assert (s.x, s.y, s.z) == (last.x, last.y, last.z)
            assert s.theta == pytest.approx(last.theta, abs=1e-15)

    def test_deterministic_given_z(self, tiny_model):
        rng = np.random.default_rng(6)
        hist = make_history(rng, n_states=5)
        z = ad.constant(rng.normal(size=(1, 4)))
        a = tiny_model.decode_autoregressive(hist, z, 3)
        b = tiny_model.decode_autoregressive(hist, z, 3)
        np.testing.assert_array_equal(a.features.value, b.features.value)

    def test_steps_validation(self, tiny_model):
        hist = straight_history()
        with pytest.raises(ValueError):
            tiny_model.decode_autoregressive(hist, ad.constant(np.zeros((1, 4))), 0)


class TestGlobalProposal:
    def test_sizes_locked_to_reference(self, tiny_model):
        rng = np.random.default_rng(7)
        hist = make_history(rng, n_states=5)
        box = tiny_model.predict_global_proposal(hist)
        ref = hist.reference_box
        assert (box.h, box.w, box.l) == (ref.h, ref.w, ref.l)

    def test_deterministic_mode_repeatable(self, tiny_model):
        rng = np.random.default_rng(8)
        hist = make_history(rng, n_states=5)
        a = tiny_model.predict_global_proposal(hist)
        b = tiny_model.predict_global_proposal(hist)
        assert a == b

    def test_k_sample_mode_requires_rng(self, tiny_model):
        rng = np.random.default_rng(9)
        hist = make_history(rng, n_states=5)
        with pytest.raises(ValueError):
            tiny_model.predict_global_proposal(hist, k_samples=3)
        out = tiny_model.predict_global_proposal(hist, k_samples=3, rng=np.random.default_rng(1))
        repeat = tiny_model.predict_global_proposal(hist, k_samples=3, rng=np.random.default_rng(1))
        assert out == repeat

    def test_translation_equivariance(self, tiny_model):
        rng = np.random.default_rng(10)
        hist = make_history(rng, n_states=5)
        shift = (250.0, -80.0, 12.0)
        base = tiny_model.predict_global_proposal(hist)
        moved = tiny_model.predict_global_proposal(hist.translated(*shift))
        assert abs(moved.x - base.x - shift[0]) < 1e-9
        assert abs(moved.y - base.y - shift[1]) < 1e-9
        assert abs(moved.z - base.z - shift[2]) < 1e-9
        assert moved.theta == pytest.approx(base.theta, abs=1e-12)


class TestElboGradientFlow:
    def test_every_parameter_receives_gradient(self, tiny_model):
        rng = np.random.default_rng(11)
        hist = make_history(rng, n_states=5)
        future = make_future(rng, hist, n_states=2)
        tiny_model.zero_grad()
        parts = elbo_loss(hist, future, tiny_model, rng.standard_normal(4))
        ad.backward(parts.total)
        for p in tiny_model.parameters():
            assert np.linalg.norm(p.grad) > 0.0, f"no gradient reached {p.name}"


class TestKlDivergence:
    def test_nonnegative_on_model_outputs(self, tiny_model):
        rng = np.random.default_rng(12)
        hist = make_history(rng, n_states=5)
        future = make_future(rng, hist, n_states=2)
        q = tiny_model.encode_posterior(hist, future)
        p = tiny_model.encode_prior(hist)
        assert float(kl_divergence(q, p).value) >= 0.0


class TestSerialization:
    def test_roundtrip_value_exact(self, tiny_model, tmp_path):
        rng = np.random.default_rng(13)
        # make values "ugly" so exactness actually gets exercised
        for p in tiny_model.parameters():
            p.value += rng.normal(size=p.value.shape) * 1e-3
        path = tmp_path / "model.txt"
        tiny_model.save(path)
        loaded = IMMModel.load(path)
        assert loaded.config == tiny_model.config
        for a, b in zip(tiny_model.parameters(), loaded.parameters()):
            assert a.name == b.name
            np.testing.assert_array_equal(a.value, b.value)

    def test_save_is_deterministic(self, tiny_model, tmp_path):
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        tiny_model.save(p1)
        tiny_model.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("not a model\n")
        with pytest.raises(ValueError):
            IMMModel.load(path)

    def test_rejects_truncation(self, tiny_model, tmp_path):
        path = tmp_path / "model.txt"
        tiny_model.save(path)
        clipped = path.read_text().splitlines()[:-2]
        path.write_text("\n".join(clipped) + "\n")
        with pytest.raises(ValueError):
            IMMModel.load(path)


class TestCenteredTargets:
    def test_centering_matches_decoder_frame(self):
        hist = straight_history(n=4, step=(2.0, 0.0, 0.0))
        future = [TrajState.from_pose(8.0 + i, 1.0, 0.0, 0.0) for i in range(2)]
        target = centered_future_features(hist, future)
        last = hist.last()
        np.testing.assert_allclose(target[0, :3], [8.0 - last.x, 1.0, 0.0])
        np.testing.assert_allclose(target[1, :3], [9.0 - last.x, 1.0, 0.0])
