"""Dense tensor primitives with hand-wired adjoints.

Every op takes and returns numpy arrays and preserves the floating dtype of
its inputs. The network carries float32; gradient checks run the same code
in float64. Backward functions are exact adjoints of their forward
counterparts and never touch global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.exception import NonFiniteError, ShapeMismatchError

DEFAULT_DTYPE = np.float32


def ensure_finite(tensor: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(tensor)):
        raise NonFiniteError(f"Non-finite values in {name}")
    return tensor


@dataclass
class GradPair:
    """A parameter tensor with its gradient buffer of the same shape."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeMismatchError(
                f"Gradient shape {self.grad.shape} does not match value shape {self.value.shape}"
            )

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


# -----------------------------
# Convolution
# -----------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_windows(x_padded: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (N, C, H_out, W_out, k, k) view, no copy
    windows = sliding_window_view(x_padded, (kernel, kernel), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def _check_conv_shapes(x, weight, bias, stride, padding):
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    if weight.shape[2] != weight.shape[3]:
        raise ShapeMismatchError(f"conv2d expects square kernels, got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatchError(
            f"Input has {x.shape[1]} channels but weight expects {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatchError(
            f"Bias shape {bias.shape} does not match {weight.shape[0]} output channels"
        )
    if stride < 1 or padding < 0:
        raise ShapeMismatchError(f"Invalid stride {stride} or padding {padding}")
    kernel = weight.shape[2]
    if kernel > x.shape[2] + 2 * padding or kernel > x.shape[3] + 2 * padding:
        raise ShapeMismatchError(
            f"Kernel {kernel} larger than padded input {x.shape[2:]} (padding {padding})"
        )


def conv2d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlation of ``x[N,C_in,H,W]`` with ``weight[C_out,C_in,k,k]``."""
    _check_conv_shapes(x, weight, bias, stride, padding)
    windows = _conv_windows(_pad(x, padding), weight.shape[2], stride)
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out)


def conv2d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    weight: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(grad_input, grad_weight, grad_bias)`` for ``conv2d_forward``."""
    _check_conv_shapes(x, weight, None, stride, padding)
    kernel = weight.shape[2]
    n, _, h, w = x.shape
    h_out = conv_output_size(h, kernel, stride, padding)
    w_out = conv_output_size(w, kernel, stride, padding)
    expected = (n, weight.shape[0], h_out, w_out)
    if grad_out.shape != expected:
        raise ShapeMismatchError(f"grad_out shape {grad_out.shape}, expected {expected}")

    x_padded = _pad(x, padding)
    windows = _conv_windows(x_padded, kernel, stride)

    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_weight = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))

    grad_padded = np.zeros_like(x_padded, dtype=np.result_type(grad_out, weight))
    for i in range(kernel):
        for j in range(kernel):
            # (N, C_out, Ho, Wo) x (C_out, C_in) -> (N, C_in, Ho, Wo)
            contribution = np.tensordot(grad_out, weight[:, :, i, j], axes=([1], [0]))
            grad_padded[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += (
                contribution.transpose(0, 3, 1, 2)
            )

    if padding > 0:
        grad_input = grad_padded[:, :, padding:padding + h, padding:padding + w]
    else:
        grad_input = grad_padded
    return np.ascontiguousarray(grad_input), grad_weight, grad_bias


# -----------------------------
# Max pooling
# -----------------------------


def pool_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def maxpool2d(x: np.ndarray, kernel: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Window maximum over ``x[N,C,H,W]``.

    Returns the pooled tensor and, per output element, the flat ``row * W + col``
    index of the winning input position. Ties go to the first position in
    row-major scan order.
    """
    if x.ndim != 4:
        raise ShapeMismatchError(f"maxpool2d expects 4-d input, got {x.shape}")
    if kernel < 1 or stride < 1:
        raise ShapeMismatchError(f"Invalid pooling kernel {kernel} or stride {stride}")
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeMismatchError(f"Pooling window {kernel} larger than input {h}x{w}")

    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, h_out, w_out, kernel * kernel)
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]

    rows = np.arange(h_out).reshape(1, 1, -1, 1) * stride + local // kernel
    cols = np.arange(w_out).reshape(1, 1, 1, -1) * stride + local % kernel
    argmax = rows * w + cols
    return np.ascontiguousarray(out), argmax.astype(np.int64)


def maxpool2d_backward(
    grad_out: np.ndarray, argmax: np.ndarray, input_shape: tuple[int, ...]
) -> np.ndarray:
    if grad_out.shape != argmax.shape:
        raise ShapeMismatchError(
            f"grad_out shape {grad_out.shape} does not match argmax shape {argmax.shape}"
        )
    n, c, h, w = input_shape
    grad_flat = np.zeros((n, c, h * w), dtype=grad_out.dtype)
    batch_idx = np.arange(n).reshape(-1, 1, 1, 1)
    channel_idx = np.arange(c).reshape(1, -1, 1, 1)
    # overlapping windows may route several outputs to one input
    np.add.at(grad_flat, (batch_idx, channel_idx, argmax), grad_out)
    return grad_flat.reshape(n, c, h, w)


# -----------------------------
# Fully connected
# -----------------------------


def fc_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatchError(
            f"fc expects input [N,{weight.shape[-1]}] for weight {weight.shape}, got {x.shape}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeMismatchError(f"Bias shape {bias.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias


def fc_backward(
    grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ShapeMismatchError(
            f"grad_out shape {grad_out.shape}, expected {(x.shape[0], weight.shape[0])}"
        )
    grad_input = grad_out @ weight
    grad_weight = grad_out.T @ x
    grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weight, grad_bias


# -----------------------------
# Activations and loss
# -----------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient ``(softmax - onehot) / N``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            f"softmax_xent expects logits [N,K] and labels [N], got {logits.shape} and {labels.shape}"
        )
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"Labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


# -----------------------------
# Optimizer
# -----------------------------


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray


def adam_step(
    params: Mapping[str, GradPair],
    moments: dict[str, AdamMoments],
    t: int,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every parameter, in place."""
    if t < 1:
        raise ValueError(f"Adam step counter must start at 1, got {t}")
    for name, pair in params.items():
        ensure_finite(pair.grad, f"gradient of {name}")

    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, pair in params.items():
        state = moments.get(name)
        if state is None:
            state = AdamMoments(np.zeros_like(pair.value), np.zeros_like(pair.value))
            moments[name] = state
        state.m = beta1 * state.m + (1.0 - beta1) * pair.grad
        state.v = beta2 * state.v + (1.0 - beta2) * pair.grad * pair.grad
        m_hat = state.m / correction1
        v_hat = state.v / correction2
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        pair.value -= update.astype(pair.value.dtype, copy=False)


class Adam:
    """Stateful wrapper around ``adam_step`` that owns moments and the step count."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments: dict[str, AdamMoments] = {}

    def step(self, params: Mapping[str, GradPair]) -> None:
        self.t += 1
        adam_step(
            params,
            self.moments,
            self.t,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )


def lr_at_epoch(base_lr: float, milestones, decay: float, epoch: int) -> float:
    """Step schedule: multiply by ``decay`` at every milestone already reached."""
    passed = sum(1 for milestone in milestones if epoch >= milestone)
    return float(base_lr * decay ** passed)
