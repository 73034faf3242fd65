import numpy as np
import pytest

from src.components.tensor_ops import (
    Adam,
    GradPair,
    adam_step,
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    lr_at_epoch,
    maxpool2d,
    maxpool2d_backward,
    relu_backward,
    relu_forward,
    softmax_xent,
)
from src.exception import NonFiniteError, ShapeMismatchError
from tests.gradcheck import numeric_grad, rel_error


def conv_oracle(x, w, b, stride, padding):
    n, c_in, h, width = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (width + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for i in range(n):
        for o in range(c_out):
            for r in range(h_out):
                for c in range(w_out):
                    total = b[o]
                    for ci in range(c_in):
                        for di in range(k):
                            for dj in range(k):
                                total += xp[i, ci, r * stride + di, c * stride + dj] * w[o, ci, di, dj]
                    out[i, o, r, c] = total
    return out


def test_conv_all_ones_sums_to_nine():
    out = conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9.0


def test_conv_zero_input_returns_bias():
    rng = np.random.default_rng(0)
    out = conv2d_forward(np.zeros((2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3)), np.arange(4.0))
    for channel in range(4):
        assert np.all(out[:, channel] == channel)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (1, 1), (2, 1)])
def test_conv_matches_nested_loop_oracle(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = conv2d_forward(x, w, b, stride=stride, padding=padding)
    np.testing.assert_allclose(out, conv_oracle(x, w, b, stride, padding), atol=1e-6)


def test_conv_preserves_float32():
    x = np.ones((1, 1, 4, 4), dtype=np.float32)
    w = np.ones((2, 1, 3, 3), dtype=np.float32)
    assert conv2d_forward(x, w, np.zeros(2, dtype=np.float32)).dtype == np.float32


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        k = int(rng.integers(1, 4))
        size = int(rng.integers(k, 6))
        x = rng.normal(size=(2, 2, size, size))
        w = rng.normal(size=(2, 2, k, k))
        b = rng.normal(size=2)
        upstream = rng.normal(size=conv2d_forward(x, w, b, stride, padding).shape)

        loss = lambda: float(np.sum(conv2d_forward(x, w, b, stride, padding) * upstream))  # noqa: E731
        grad_x, grad_w, grad_b = conv2d_backward(upstream, x, w, stride, padding)
        assert rel_error(grad_x, numeric_grad(loss, x)) < 1e-3
        assert rel_error(grad_w, numeric_grad(loss, w)) < 1e-3
        assert rel_error(grad_b, numeric_grad(loss, b)) < 1e-3


def test_conv_backward_zero_upstream_gives_zero():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    grads = conv2d_backward(np.zeros((1, 3, 2, 2)), x, w)
    assert all(np.all(g == 0) for g in grads)


def test_conv_single_pixel_upstream_gives_input_patch():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 1, 4, 4))
    w = rng.normal(size=(1, 1, 3, 3))
    grad_out = np.zeros((1, 1, 2, 2))
    grad_out[0, 0, 1, 0] = 1.0
    _, grad_w, _ = conv2d_backward(grad_out, x, w)
    np.testing.assert_array_equal(grad_w[0, 0], x[0, 0, 1:4, 0:3])


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeMismatchError, match="channels"):
        conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_maxpool_picks_maximum_and_its_position():
    out, argmax = maxpool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
    assert out[0, 0, 0, 0] == 4.0
    assert argmax[0, 0, 0, 0] == 1 * 2 + 1


def test_maxpool_ties_go_to_first_position():
    _, argmax = maxpool2d(np.ones((1, 1, 4, 4)), 2, 2)
    np.testing.assert_array_equal(argmax[0, 0], [[0, 2], [8, 10]])


def test_maxpool_matches_window_scan():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 4, 4))
    out, argmax = maxpool2d(x, 2, 2)
    for n in range(2):
        for c in range(3):
            for r in range(2):
                for col in range(2):
                    window = x[n, c, 2 * r:2 * r + 2, 2 * col:2 * col + 2]
                    assert out[n, c, r, col] == window.max()
                    local = int(np.argmax(window))
                    assert argmax[n, c, r, col] == (2 * r + local // 2) * 4 + 2 * col + local % 2


def test_maxpool_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = rng.normal(size=(2, 2, 5, 5))
        kernel, stride = [(2, 2), (2, 1), (3, 2)][int(rng.integers(0, 3))]
        out, argmax = maxpool2d(x, kernel, stride)
        upstream = rng.normal(size=out.shape)
        loss = lambda: float(np.sum(maxpool2d(x, kernel, stride)[0] * upstream))  # noqa: E731
        analytic = maxpool2d_backward(upstream, argmax, x.shape)
        assert rel_error(analytic, numeric_grad(loss, x, h=1e-6)) < 1e-3


def test_maxpool_rejects_oversized_window():
    with pytest.raises(ShapeMismatchError, match="larger than input"):
        maxpool2d(np.zeros((1, 1, 2, 2)), 3, 1)


def test_fc_identity_and_hand_arithmetic():
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(fc_forward(x, np.eye(3), np.zeros(3)), x)
    out = fc_forward(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([5.0]))
    np.testing.assert_array_equal(out, [[16.0]])


def test_fc_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(100):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(2, 4))
        b = rng.normal(size=2)
        upstream = rng.normal(size=(3, 2))
        loss = lambda: float(np.sum(fc_forward(x, w, b) * upstream))  # noqa: E731
        grad_x, grad_w, grad_b = fc_backward(upstream, x, w)
        assert rel_error(grad_x, numeric_grad(loss, x)) < 1e-3
        assert rel_error(grad_w, numeric_grad(loss, w)) < 1e-3
        assert rel_error(grad_b, numeric_grad(loss, b)) < 1e-3


def test_relu_backward_masks_inactive_positions():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu_forward(x), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu_backward(np.ones(3), x), [0.0, 0.0, 1.0])


def test_softmax_xent_uniform_logits():
    loss, _ = softmax_xent(np.zeros((5, 4)), np.array([0, 1, 2, 3, 0]))
    assert loss == pytest.approx(np.log(4))


def test_softmax_xent_dominant_true_class():
    logits = np.array([[1e4, 0.0, 0.0]])
    loss, _ = softmax_xent(logits, np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_softmax_xent_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(4, 5))
    labels = rng.integers(0, 5, size=4)
    _, grad = softmax_xent(logits, labels)
    numeric = numeric_grad(lambda: softmax_xent(logits, labels)[0], logits, h=1e-5)
    assert rel_error(grad, numeric) < 1e-4


def test_softmax_xent_rejects_out_of_range_label():
    with pytest.raises(ValueError, match="Labels must lie"):
        softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


def test_adam_zero_gradient_leaves_parameters():
    pair = GradPair(np.array([1.0, -2.0]))
    adam_step({"p": pair}, {}, t=1)
    np.testing.assert_array_equal(pair.value, [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    pair = GradPair(np.array([0.0, 0.0]), grad=np.array([3.0, -0.5]))
    adam_step({"p": pair}, {}, t=1, lr=0.001)
    np.testing.assert_allclose(pair.value, [-0.001, 0.001], rtol=1e-6)


def test_adam_two_steps_match_hand_trace():
    g = np.array([0.2, -1.5])
    pair = GradPair(np.array([1.0, 1.0]), grad=g.copy())
    optimizer = Adam(lr=0.01)
    optimizer.step({"p": pair})
    optimizer.step({"p": pair})

    value, m, v = np.array([1.0, 1.0]), np.zeros(2), np.zeros(2)
    for t in (1, 2):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        value = value - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(pair.value, value, rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    pair = GradPair(np.zeros(2), grad=np.array([np.nan, 0.0]))
    with pytest.raises(NonFiniteError, match="gradient of p"):
        adam_step({"p": pair}, {}, t=1)
    np.testing.assert_array_equal(pair.value, [0.0, 0.0])


def test_adam_rejects_step_zero():
    with pytest.raises(ValueError, match="start at 1"):
        adam_step({}, {}, t=0)


def test_lr_step_decay_at_milestones():
    assert lr_at_epoch(0.001, [10, 20], 0.1, 0) == pytest.approx(0.001)
    assert lr_at_epoch(0.001, [10, 20], 0.1, 10) == pytest.approx(1e-4)
    assert lr_at_epoch(0.001, [10, 20], 0.1, 25) == pytest.approx(1e-5)


def test_gradpair_shape_must_match():
    with pytest.raises(ShapeMismatchError):
        GradPair(np.zeros(3), grad=np.zeros(2))
