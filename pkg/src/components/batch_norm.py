"""Batch-norm with EMA statistics and its fold into per-step SNN weights.

The ANN branch normalizes a pre-activation ``z`` as
``gamma * (z - mu_ema) / sqrt(sigma_ema**2 + eps) + beta``. The SNN branch
never normalizes explicitly: it runs every time step with the folded pair
``(W_s, b_s)`` so that the per-step affine maps summed over the window equal
the ANN-branch normalization of the window-summed pre-activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.components.tensor_ops import GradPair, ensure_finite
from src.exception import ShapeMismatchError

DEFAULT_MOMENTUM = 0.1
DEFAULT_EPS = 1e-5


@dataclass
class BnState:
    gamma: GradPair
    beta: GradPair
    mu_ema: np.ndarray
    sigma_ema: np.ndarray
    alpha_bn: float = DEFAULT_MOMENTUM
    eps_bn: float = DEFAULT_EPS

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_bn <= 1.0:
            raise ValueError(f"EMA momentum must lie in [0, 1], got {self.alpha_bn}")
        if not self.eps_bn > 0:
            raise ValueError(f"BN epsilon must be positive, got {self.eps_bn}")
        shapes = {self.gamma.value.shape, self.beta.value.shape, self.mu_ema.shape, self.sigma_ema.shape}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"BN parameters disagree in shape: {shapes}")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, alpha_bn=DEFAULT_MOMENTUM, eps_bn=DEFAULT_EPS):
        return cls(
            gamma=GradPair(np.ones(channels, dtype=dtype)),
            beta=GradPair(np.zeros(channels, dtype=dtype)),
            mu_ema=np.zeros(channels, dtype=dtype),
            sigma_ema=np.ones(channels, dtype=dtype),
            alpha_bn=alpha_bn,
            eps_bn=eps_bn,
        )

    @property
    def channels(self) -> int:
        return self.gamma.value.shape[0]

    def denominator(self) -> np.ndarray:
        variance = self.sigma_ema * self.sigma_ema + self.eps_bn
        assert np.all(variance > 0), "sigma_ema**2 + eps must stay positive"
        return np.sqrt(variance).astype(self.sigma_ema.dtype, copy=False)


def _channel_view(values: np.ndarray, ndim: int) -> np.ndarray:
    # per-channel vector broadcast against [N, C, ...] activations
    return values.reshape((1, -1) + (1,) * (ndim - 2))


def _weight_view(values: np.ndarray, ndim: int) -> np.ndarray:
    # per-output-channel vector broadcast against [C_out, ...] weights
    return values.reshape((-1,) + (1,) * (ndim - 1))


def _reduce_axes(ndim: int) -> tuple[int, ...]:
    return (0,) + tuple(range(2, ndim))


def batch_statistics(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation of a pre-activation batch."""
    axes = _reduce_axes(z.ndim)
    return z.mean(axis=axes), z.std(axis=axes)


def bn_apply(z: np.ndarray, bn: BnState) -> np.ndarray:
    if z.shape[1] != bn.channels:
        raise ShapeMismatchError(f"Activation has {z.shape[1]} channels, BN has {bn.channels}")
    scale = _channel_view(bn.gamma.value / bn.denominator(), z.ndim)
    return (z - _channel_view(bn.mu_ema, z.ndim)) * scale + _channel_view(bn.beta.value, z.ndim)


def bn_backward(grad_y: np.ndarray, z: np.ndarray, bn: BnState):
    """Adjoint of ``bn_apply`` with the EMA statistics held constant."""
    denominator = bn.denominator()
    axes = _reduce_axes(z.ndim)
    normalized = (z - _channel_view(bn.mu_ema, z.ndim)) / _channel_view(denominator, z.ndim)
    grad_gamma = (grad_y * normalized).sum(axis=axes)
    grad_beta = grad_y.sum(axis=axes)
    grad_z = grad_y * _channel_view(bn.gamma.value / denominator, z.ndim)
    return grad_z, grad_gamma, grad_beta


def fold_weights(weight: np.ndarray, bias: np.ndarray, bn: BnState, time_steps: int):
    """Per-time-step weights and bias with the normalization absorbed."""
    if time_steps < 1:
        raise ValueError(f"Time window must be at least 1, got {time_steps}")
    if weight.shape[0] != bn.channels or bias.shape != (bn.channels,):
        raise ShapeMismatchError(
            f"Weight {weight.shape} / bias {bias.shape} do not match {bn.channels} BN channels"
        )
    denominator = bn.denominator()
    gamma = bn.gamma.value
    folded_weight = weight * _weight_view(gamma / denominator, weight.ndim)
    folded_bias = gamma * (bias - bn.mu_ema) / (time_steps * denominator) + bn.beta.value / time_steps
    return folded_weight, folded_bias.astype(bias.dtype, copy=False)


def fold_backward(
    grad_folded_weight: np.ndarray,
    grad_folded_bias: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    bn: BnState,
    time_steps: int,
):
    """Chain gradients on ``(W_s, b_s)`` back to ``(W, b, gamma, beta)``."""
    denominator = bn.denominator()
    gamma = bn.gamma.value
    weight_axes = tuple(range(1, weight.ndim))

    grad_weight = grad_folded_weight * _weight_view(gamma / denominator, weight.ndim)
    grad_bias = grad_folded_bias * gamma / (time_steps * denominator)
    grad_gamma = (grad_folded_weight * weight).sum(axis=weight_axes) / denominator
    grad_gamma = grad_gamma + grad_folded_bias * (bias - bn.mu_ema) / (time_steps * denominator)
    grad_beta = grad_folded_bias / time_steps
    return grad_weight, grad_bias, grad_gamma, grad_beta


def update_ema(bn: BnState, batch_mu: np.ndarray, batch_sigma: np.ndarray) -> BnState:
    ensure_finite(np.asarray(batch_mu), "batch mean")
    ensure_finite(np.asarray(batch_sigma), "batch standard deviation")
    alpha = bn.alpha_bn
    dtype = bn.mu_ema.dtype
    bn.mu_ema = ((1.0 - alpha) * bn.mu_ema + alpha * batch_mu).astype(dtype, copy=False)
    bn.sigma_ema = ((1.0 - alpha) * bn.sigma_ema + alpha * batch_sigma).astype(dtype, copy=False)
    return bn
