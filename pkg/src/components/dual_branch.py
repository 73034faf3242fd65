"""Forward, backward and inference of the weight-shared SNN/ANN pair.

Phase one runs the SNN branch over the whole window with BN-folded weights
and accumulates spikes per layer. Phase two runs the ANN branch once on the
window-summed input; every layer's ReLU output is handed to its mapping unit
together with that layer's spike counts. Gradients only ever travel along the
ANN branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.components.batch_norm import bn_apply, bn_backward, fold_weights
from src.components.network import SpikingNetwork
from src.components.tensor_ops import (
    ensure_finite,
    fc_backward,
    maxpool2d,
    maxpool2d_backward,
    relu_backward,
    relu_forward,
    softmax_xent,
)
from src.exception import NonFiniteError, ShapeMismatchError


@dataclass
class LayerCache:
    layer_input: np.ndarray
    pre_activation: np.ndarray
    normalized: np.ndarray
    relu_shape: tuple[int, ...]
    argmax: np.ndarray | None
    mapped: np.ndarray


@dataclass
class ForwardResult:
    logits: np.ndarray
    counts: list[np.ndarray]
    relu_outs: list[np.ndarray]
    classifier_input: np.ndarray = field(repr=False)
    caches: list[LayerCache] = field(default_factory=list, repr=False)


def _check_layer(tensor: np.ndarray, index: int, what: str) -> None:
    ensure_finite(tensor, f"{what} of layer {index}")


def snn_branch(net: SpikingNetwork, batch: np.ndarray, masks: list[np.ndarray] | None = None):
    """Run the SNN branch over the window; returns per-layer spike counts.

    With ``masks`` each layer's output spikes are multiplied by its mask at
    every step before they reach the next layer or the accumulator.
    """
    time_steps = net.time_steps
    n = batch.shape[0]
    folded = [fold_weights(layer.weight.value, layer.bias.value, layer.bn, time_steps) for layer in net.layers]
    counts = [np.zeros((n,) + layer.stage.out_shape, dtype=np.int64) for layer in net.layers]
    for layer in net.layers:
        layer.neuron.reset_state()
        layer.neuron.set_threshold(layer.threshold)

    for _ in range(time_steps):
        layer_input = batch
        for index, layer in enumerate(net.layers):
            folded_weight, folded_bias = folded[index]
            current = layer.affine(layer_input, folded_weight, folded_bias)
            if layer.stage.pool is not None:
                current, _ = maxpool2d(current, *layer.stage.pool)
            try:
                spikes = layer.neuron.step(current)
            except NonFiniteError as e:
                raise NonFiniteError(f"Layer {index}: {e}") from e
            if masks is not None:
                spikes = spikes * masks[index]
            counts[index] += spikes.astype(np.int64)
            layer_input = spikes
    return counts


def snn_logits(net: SpikingNetwork, batch: np.ndarray, masks=None) -> tuple[np.ndarray, list[np.ndarray]]:
    counts = snn_branch(net, batch, masks=masks)
    if counts:
        features = counts[-1].astype(net.dtype)
    else:
        # classifier-only network: the window-summed input
        features = batch * net.dtype.type(net.time_steps)
    return net.classifier.forward(features), counts


def s2a_forward(net: SpikingNetwork, batch: np.ndarray, counts: list[np.ndarray] | None = None) -> ForwardResult:
    """Both phases; ``counts`` may be supplied to reuse (or freeze) SNN activity."""
    batch = np.asarray(batch, dtype=net.dtype)
    if batch.shape[1:] != net.spec.input_shape:
        raise ShapeMismatchError(f"Batch shape {batch.shape[1:]} does not match network input {net.spec.input_shape}")
    if counts is None:
        counts = snn_branch(net, batch)

    activation = batch * net.dtype.type(net.time_steps)
    relu_outs: list[np.ndarray] = []
    caches: list[LayerCache] = []
    for index, layer in enumerate(net.layers):
        pre_activation = layer.affine(activation, layer.weight.value, layer.bias.value)
        _check_layer(pre_activation, index, "pre-activation")
        normalized = bn_apply(pre_activation, layer.bn)
        relu_out = relu_forward(normalized)
        argmax = None
        if layer.stage.pool is not None:
            relu_out, argmax = maxpool2d(relu_out, *layer.stage.pool)
        if relu_out.shape != counts[index].shape:
            raise ShapeMismatchError(
                f"Layer {index}: ANN branch produced {relu_out.shape} but SNN branch {counts[index].shape}; "
                "check pooling placement"
            )
        mapped = layer.unit.forward(relu_out, counts[index])
        caches.append(
            LayerCache(
                layer_input=activation,
                pre_activation=pre_activation,
                normalized=normalized,
                relu_shape=normalized.shape,
                argmax=argmax,
                mapped=mapped,
            )
        )
        relu_outs.append(relu_out)
        activation = mapped

    classifier_input = activation.reshape(activation.shape[0], -1)
    logits = net.classifier.forward(classifier_input)
    _check_layer(logits, len(net.layers), "logits")
    return ForwardResult(
        logits=logits,
        counts=counts,
        relu_outs=relu_outs,
        classifier_input=classifier_input,
        caches=caches,
    )


def s2a_backward(net: SpikingNetwork, result: ForwardResult, grad_logits: np.ndarray) -> None:
    """Accumulate parameter gradients along the ANN branch into ``GradPair.grad``."""
    classifier = net.classifier
    grad_input, grad_weight, grad_bias = fc_backward(grad_logits, result.classifier_input, classifier.weight.value)
    classifier.weight.grad = grad_weight
    classifier.bias.grad = grad_bias

    grad = grad_input
    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        cache = result.caches[index]
        grad = grad.reshape(cache.mapped.shape)
        grad_relu = layer.unit.backward(grad)
        if cache.argmax is not None:
            grad_relu = maxpool2d_backward(grad_relu, cache.argmax, cache.relu_shape)
        grad_normalized = relu_backward(grad_relu, cache.normalized)
        grad_pre, grad_gamma, grad_beta = bn_backward(grad_normalized, cache.pre_activation, layer.bn)
        grad, grad_weight, grad_bias = layer.affine_backward(grad_pre, cache.layer_input, layer.weight.value)
        layer.weight.grad = grad_weight
        layer.bias.grad = grad_bias
        layer.bn.gamma.grad = grad_gamma
        layer.bn.beta.grad = grad_beta


def s2a_gradients(net: SpikingNetwork, batch: np.ndarray, labels: np.ndarray, counts=None):
    """Loss and ANN-branch gradients for one batch; returns ``(loss, result)``."""
    result = s2a_forward(net, batch, counts=counts)
    loss, grad_logits = softmax_xent(result.logits, labels)
    s2a_backward(net, result, grad_logits)
    return loss, result


def s2a_infer(net: SpikingNetwork, batch: np.ndarray) -> np.ndarray:
    """Predict with the SNN branch and shared classifier only."""
    batch = np.asarray(batch, dtype=net.dtype)
    logits, _ = snn_logits(net, batch)
    return np.argmax(logits, axis=1)


def plain_ann_forward(net: SpikingNetwork, batch: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """The weight-shared ReLU network on its own, without mapping units."""
    batch = np.asarray(batch, dtype=net.dtype)
    activation = batch * net.dtype.type(net.time_steps)
    relu_outs = []
    for layer in net.layers:
        pre_activation = layer.affine(activation, layer.weight.value, layer.bias.value)
        relu_out = relu_forward(bn_apply(pre_activation, layer.bn))
        if layer.stage.pool is not None:
            relu_out, _ = maxpool2d(relu_out, *layer.stage.pool)
        relu_outs.append(relu_out)
        activation = relu_out
    return net.classifier.forward(activation), relu_outs


def denoised_infer(net: SpikingNetwork, batch: np.ndarray) -> np.ndarray:
    """SNN predictions with spikes suppressed wherever the shared ReLU ANN is silent."""
    batch = np.asarray(batch, dtype=net.dtype)
    _, relu_outs = plain_ann_forward(net, batch)
    masks = [(relu_out > 0).astype(net.dtype) for relu_out in relu_outs]
    logits, _ = snn_logits(net, batch, masks=masks)
    return np.argmax(logits, axis=1)
