import numpy as np
import pytest

from trajsot import autodiff as ad

from conftest import finite_difference_check, kl_quadrature


def param(rng, name, shape, scale=1.0, positive=False):
    values = rng.normal(0.0, scale, size=shape)
    if positive:
        values = np.abs(values) + 0.5
    return ad.Parameter(name, values)


def weighted_sum(out: ad.Tensor, seed: int = 0) -> ad.Tensor:
    """Scalar projection of an op output with weights fixed by the seed."""
    w = ad.constant(np.random.default_rng(seed).normal(size=out.value.shape))
    return ad.sum_all(ad.mul(out, w))


class TestForwardBasics:
    def test_matmul_identity(self):
        a = ad.constant(np.eye(3))
        b = ad.constant(np.arange(9.0).reshape(3, 3))
        np.testing.assert_array_equal(ad.matmul(a, b).value, b.value)

    def test_matmul_hand_case(self):
        a = ad.constant([[1.0, 2.0], [3.0, 4.0]])
        b = ad.constant([[1.0], [1.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).value, [[3.0], [7.0]])

    def test_matmul_shape_error(self):
        with pytest.raises(ValueError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))

    def test_elementwise_shape_errors(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((3, 2)))
        for op in (ad.add, ad.sub, ad.mul, ad.div):
            with pytest.raises(ValueError):
                op(a, b)

    def test_relu_kills_negatives(self):
        x = ad.constant([[-1.0, 0.0, 2.0]])
        np.testing.assert_array_equal(ad.relu(x).value, [[0.0, 0.0, 2.0]])

    def test_concat_shapes(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((2, 5)))
        assert ad.concat_cols(a, b).value.shape == (2, 8)
        c = ad.constant(np.ones((4, 3)))
        assert ad.concat_rows(a, c).value.shape == (6, 3)

    def test_linear_zero_weight_broadcasts_bias(self):
        x = ad.constant(np.random.default_rng(0).normal(size=(4, 3)))
        w = ad.constant(np.zeros((3, 2)))
        b = ad.constant([[1.5, -2.0]])
        out = ad.linear(x, w, b)
        np.testing.assert_array_equal(out.value, np.tile([1.5, -2.0], (4, 1)))

    def test_log_requires_positive(self):
        with pytest.raises(ValueError):
            ad.log(ad.constant([[0.0, 1.0]]))

    def test_forward_determinism(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(5, 5))
        b = rng.normal(size=(5, 5))

        def run():
            return ad.softmax_rows(ad.matmul(ad.constant(a), ad.constant(b))).value

        first = run()
        for _ in range(3):
            assert np.array_equal(run(), first)


class TestSoftmax:
    def test_uniform_row(self):
        out = ad.softmax_rows(ad.constant([[2.0, 2.0, 2.0, 2.0]]))
        np.testing.assert_allclose(out.value, 0.25)

    def test_large_magnitudes_stable(self):
        out = ad.softmax_rows(ad.constant([[1000.0, 0.0]]))
        np.testing.assert_allclose(out.value, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        out = ad.softmax_rows(ad.constant(rng.normal(0, 5, size=(20, 7))))
        np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out.value >= 0.0) and np.all(out.value <= 1.0)


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        gain = ad.Parameter("g", np.ones((1, 4)))
        bias = ad.Parameter("b", np.zeros((1, 4)))
        out = ad.layer_norm(ad.constant([[3.0, 3.0, 3.0, 3.0]]), gain, bias)
        np.testing.assert_allclose(out.value, 0.0, atol=1e-9)

    def test_already_normalized_row(self):
        gain = ad.Parameter("g", np.ones((1, 2)))
        bias = ad.Parameter("b", np.zeros((1, 2)))
        out = ad.layer_norm(ad.constant([[1.0, -1.0]]), gain, bias)
        np.testing.assert_allclose(out.value, [[1.0, -1.0]], atol=1e-5)


class TestGradients:
    """Central finite differences, step 1e-5, rel err < 1e-4."""

    def test_matmul(self):
        rng = np.random.default_rng(10)
        a = param(rng, "a", (3, 4))
        b = param(rng, "b", (4, 2))
        finite_difference_check(lambda: weighted_sum(ad.matmul(a, b)), [a, b])

    def test_elementwise_ops(self):
        rng = np.random.default_rng(11)
        a = param(rng, "a", (3, 3))
        b = param(rng, "b", (3, 3), positive=True)
        finite_difference_check(lambda: weighted_sum(ad.add(a, b)), [a, b])
        finite_difference_check(lambda: weighted_sum(ad.sub(a, b)), [a, b])
        finite_difference_check(lambda: weighted_sum(ad.mul(a, b)), [a, b])
        finite_difference_check(lambda: weighted_sum(ad.div(a, b)), [a, b])

    def test_unary_ops(self):
        rng = np.random.default_rng(12)
        a = param(rng, "a", (2, 5))
        pos = param(rng, "pos", (2, 5), positive=True)
        shifted = ad.Parameter("s", rng.normal(size=(2, 5)) + np.sign(rng.normal(size=(2, 5))) * 2)
        finite_difference_check(lambda: weighted_sum(ad.exp(a)), [a])
        finite_difference_check(lambda: weighted_sum(ad.log(pos)), [pos])
        finite_difference_check(lambda: weighted_sum(ad.absolute(shifted)), [shifted])
        finite_difference_check(lambda: weighted_sum(ad.relu(shifted)), [shifted])
        finite_difference_check(lambda: weighted_sum(ad.transpose(a)), [a])
        finite_difference_check(lambda: weighted_sum(ad.scale(a, -1.7)), [a])

    def test_structure_ops(self):
        rng = np.random.default_rng(13)
        a = param(rng, "a", (3, 4))
        b = param(rng, "b", (3, 2))
        c = param(rng, "c", (2, 4))
        bias = param(rng, "bias", (1, 4))
        finite_difference_check(lambda: weighted_sum(ad.concat_cols(a, b)), [a, b])
        finite_difference_check(lambda: weighted_sum(ad.concat_rows(a, c)), [a, c])
        finite_difference_check(lambda: weighted_sum(ad.stack_rows([a, c])), [a, c])
        finite_difference_check(lambda: weighted_sum(ad.slice_cols(a, 1, 3)), [a])
        finite_difference_check(lambda: weighted_sum(ad.slice_rows(a, 0, 2)), [a])
        finite_difference_check(lambda: weighted_sum(ad.add_bias(a, bias)), [a, bias])

    def test_reductions(self):
        rng = np.random.default_rng(14)
        a = param(rng, "a", (4, 3))
        finite_difference_check(lambda: ad.sum_all(a), [a])
        finite_difference_check(lambda: ad.mean_all(a), [a])
        finite_difference_check(lambda: weighted_sum(ad.mean_rows(a)), [a])

    def test_softmax(self):
        rng = np.random.default_rng(15)
        a = param(rng, "a", (4, 6))
        finite_difference_check(lambda: weighted_sum(ad.softmax_rows(a)), [a])

    def test_layer_norm(self):
        rng = np.random.default_rng(16)
        x = param(rng, "x", (4, 6))
        gain = param(rng, "gain", (1, 6))
        bias = param(rng, "bias", (1, 6))
        finite_difference_check(lambda: weighted_sum(ad.layer_norm(x, gain, bias)), [x, gain, bias])

    def test_linear(self):
        rng = np.random.default_rng(17)
        x = param(rng, "x", (3, 4))
        w = param(rng, "w", (4, 2))
        b = param(rng, "b", (1, 2))
        finite_difference_check(lambda: weighted_sum(ad.linear(x, w, b)), [x, w, b])


class TestKl:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(20)
        mu = ad.constant(rng.normal(size=(1, 6)))
        sigma = ad.constant(np.abs(rng.normal(size=(1, 6))) + 0.5)
        assert float(ad.kl_diag_gaussians(mu, sigma, mu, sigma).value) == 0.0

    def test_unit_shift_half(self):
        one = ad.constant([[1.0]])
        zero = ad.constant([[0.0]])
        unit = ad.constant([[1.0]])
        assert float(ad.kl_diag_gaussians(one, unit, zero, unit).value) == pytest.approx(0.5, abs=1e-12)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            mu_q = ad.constant(rng.normal(size=(1, 4)))
            s_q = ad.constant(np.abs(rng.normal(size=(1, 4))) + 0.1)
            mu_p = ad.constant(rng.normal(size=(1, 4)))
            s_p = ad.constant(np.abs(rng.normal(size=(1, 4))) + 0.1)
            kl = float(ad.kl_diag_gaussians(mu_q, s_q, mu_p, s_p).value)
            assert kl >= 0.0
            if not (np.array_equal(mu_q.value, mu_p.value) and np.array_equal(s_q.value, s_p.value)):
                assert kl > 0.0

    def test_rejects_nonpositive_sigma(self):
        mu = ad.constant([[0.0]])
        good = ad.constant([[1.0]])
        bad = ad.constant([[0.0]])
        with pytest.raises(ValueError):
            ad.kl_diag_gaussians(mu, bad, mu, good)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            mu_q = rng.normal(size=8)
            s_q = np.abs(rng.normal(size=8)) + 0.3
            mu_p = rng.normal(size=8)
            s_p = np.abs(rng.normal(size=8)) + 0.3
            closed = float(
                ad.kl_diag_gaussians(
                    ad.constant(mu_q.reshape(1, -1)),
                    ad.constant(s_q.reshape(1, -1)),
                    ad.constant(mu_p.reshape(1, -1)),
                    ad.constant(s_p.reshape(1, -1)),
                ).value
            )
            assert closed == pytest.approx(kl_quadrature(mu_q, s_q, mu_p, s_p), abs=1e-6)

    def test_gradients(self):
        rng = np.random.default_rng(23)
        mu_q = param(rng, "mu_q", (1, 5))
        s_q = param(rng, "s_q", (1, 5), positive=True)
        mu_p = param(rng, "mu_p", (1, 5))
        s_p = param(rng, "s_p", (1, 5), positive=True)
        finite_difference_check(
            lambda: ad.kl_diag_gaussians(mu_q, s_q, mu_p, s_p), [mu_q, s_q, mu_p, s_p]
        )


class TestBackwardSemantics:
    def test_sum_gives_ones(self):
        p = ad.Parameter("p", np.arange(6.0).reshape(2, 3))
        ad.backward(ad.sum_all(p))
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_sum_of_squares_gives_2p(self):
        p = ad.Parameter("p", np.arange(6.0).reshape(2, 3) - 2.0)
        ad.backward(ad.sum_all(ad.mul(p, p)))
        np.testing.assert_array_equal(p.grad, 2.0 * p.value)

    def test_accumulation_without_reset(self):
        p = ad.Parameter("p", np.ones((2, 2)))
        ad.backward(ad.sum_all(p))
        ad.backward(ad.sum_all(p))
        np.testing.assert_array_equal(p.grad, 2.0 * np.ones((2, 2)))
        p.zero_grad()
        np.testing.assert_array_equal(p.grad, np.zeros((2, 2)))

    def test_diamond_reuse(self):
        p = ad.Parameter("p", np.array([[2.0]]))
        q = ad.mul(p, p)  # p^2
        loss = ad.sum_all(ad.add(q, q))  # 2 p^2 -> d/dp = 4p
        ad.backward(loss)
        np.testing.assert_allclose(p.grad, [[8.0]])

    def test_nonscalar_root_rejected(self):
        p = ad.Parameter("p", np.ones((2, 2)))
        with pytest.raises(ValueError):
            ad.backward(ad.mul(p, p))
