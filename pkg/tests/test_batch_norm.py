import numpy as np
import pytest

from src.components.batch_norm import (
    BnState,
    batch_statistics,
    bn_apply,
    bn_backward,
    fold_backward,
    fold_weights,
    update_ema,
)
from src.components.tensor_ops import GradPair, conv2d_forward, fc_forward
from tests.gradcheck import numeric_grad, rel_error


def random_bn(rng, channels):
    return BnState(
        gamma=GradPair(rng.uniform(0.5, 1.5, channels)),
        beta=GradPair(rng.normal(0, 0.2, channels)),
        mu_ema=rng.normal(0, 0.5, channels),
        sigma_ema=rng.uniform(0.5, 2.0, channels),
    )


def test_identity_statistics_fold_to_original_weights():
    rng = np.random.default_rng(0)
    bn = BnState.identity(3, dtype=np.float64)
    bn.sigma_ema = np.full(3, np.sqrt(1 - bn.eps_bn))
    weight, bias = rng.normal(size=(3, 4)), rng.normal(size=3)
    folded_weight, folded_bias = fold_weights(weight, bias, bn, time_steps=4)
    np.testing.assert_allclose(folded_weight, weight, rtol=1e-12)
    np.testing.assert_allclose(folded_bias, bias / 4, rtol=1e-12)


def test_single_step_fold_is_plain_bn_fold():
    rng = np.random.default_rng(1)
    bn = random_bn(rng, 3)
    weight, bias = rng.normal(size=(3, 4)), rng.normal(size=3)
    _, folded_bias = fold_weights(weight, bias, bn, time_steps=1)
    denominator = np.sqrt(bn.sigma_ema ** 2 + bn.eps_bn)
    expected = bn.gamma.value * (bias - bn.mu_ema) / denominator + bn.beta.value
    np.testing.assert_allclose(folded_bias, expected, rtol=1e-12)


@pytest.mark.parametrize("time_steps", [1, 2, 5, 8])
def test_folded_steps_sum_to_normalized_window(time_steps):
    rng = np.random.default_rng(time_steps)
    bn = random_bn(rng, 5)
    weight, bias = rng.normal(size=(5, 6)), rng.normal(size=5)
    inputs = rng.integers(0, 2, size=(time_steps, 3, 6)).astype(np.float64)

    folded_weight, folded_bias = fold_weights(weight, bias, bn, time_steps)
    per_step = sum(fc_forward(x, folded_weight, folded_bias) for x in inputs)
    window = bn_apply(fc_forward(inputs.sum(axis=0), weight, bias), bn)
    np.testing.assert_allclose(per_step, window, atol=1e-5)


def test_fold_consistency_for_conv_weights():
    rng = np.random.default_rng(9)
    bn = random_bn(rng, 2)
    weight, bias = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)
    inputs = rng.integers(0, 2, size=(4, 2, 1, 5, 5)).astype(np.float64)

    folded_weight, folded_bias = fold_weights(weight, bias, bn, 4)
    per_step = sum(conv2d_forward(x, folded_weight, folded_bias) for x in inputs)
    window = bn_apply(conv2d_forward(inputs.sum(axis=0), weight, bias), bn)
    np.testing.assert_allclose(per_step, window, atol=1e-5)


def test_fold_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    bn = random_bn(rng, 3)
    weight, bias = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    upstream_w, upstream_b = rng.normal(size=weight.shape), rng.normal(size=3)

    def loss():
        folded_weight, folded_bias = fold_weights(weight, bias, bn, 5)
        return float(np.sum(folded_weight * upstream_w) + np.sum(folded_bias * upstream_b))

    grad_w, grad_b, grad_gamma, grad_beta = fold_backward(upstream_w, upstream_b, weight, bias, bn, 5)
    assert rel_error(grad_w, numeric_grad(loss, weight)) < 1e-6
    assert rel_error(grad_b, numeric_grad(loss, bias)) < 1e-6
    assert rel_error(grad_gamma, numeric_grad(loss, bn.gamma.value)) < 1e-6
    assert rel_error(grad_beta, numeric_grad(loss, bn.beta.value)) < 1e-6


def test_bn_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    bn = random_bn(rng, 3)
    z = rng.normal(size=(4, 3, 2, 2))
    upstream = rng.normal(size=z.shape)
    loss = lambda: float(np.sum(bn_apply(z, bn) * upstream))  # noqa: E731

    grad_z, grad_gamma, grad_beta = bn_backward(upstream, z, bn)
    assert rel_error(grad_z, numeric_grad(loss, z)) < 1e-6
    assert rel_error(grad_gamma, numeric_grad(loss, bn.gamma.value)) < 1e-6
    assert rel_error(grad_beta, numeric_grad(loss, bn.beta.value)) < 1e-6


def test_ema_arithmetic():
    bn = BnState.identity(2, dtype=np.float64)
    update_ema(bn, np.ones(2), np.full(2, 3.0))
    np.testing.assert_allclose(bn.mu_ema, [0.1, 0.1])
    np.testing.assert_allclose(bn.sigma_ema, [1.2, 1.2])


@pytest.mark.parametrize("alpha,expected_mu", [(1.0, 2.0), (0.0, 0.0)])
def test_ema_momentum_limits(alpha, expected_mu):
    bn = BnState.identity(1, dtype=np.float64, alpha_bn=alpha)
    update_ema(bn, np.array([2.0]), np.array([1.0]))
    assert bn.mu_ema[0] == expected_mu


def test_batch_statistics_per_channel():
    z = np.stack([np.zeros((3, 2, 2)), np.ones((3, 2, 2))], axis=1)
    mu, sigma = batch_statistics(z)
    np.testing.assert_array_equal(mu, [0.0, 1.0])
    np.testing.assert_array_equal(sigma, [0.0, 0.0])


def test_fold_rejects_empty_window():
    bn = BnState.identity(2)
    with pytest.raises(ValueError):
        fold_weights(np.zeros((2, 3), dtype=np.float32), np.zeros(2, dtype=np.float32), bn, 0)
