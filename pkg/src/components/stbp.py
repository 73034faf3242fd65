"""Surrogate-gradient backpropagation through time for the spiking branch.

The baseline trainer unrolls every layer over the window and differentiates
the spike nonlinearity with the rectangle pseudo-derivative. The reset path
is detached: under hard reset the membrane carry is ``1 - o[t]``, under soft
reset it is one. Gradients flow through the BN fold, so the same parameter
store (``W, b, gamma, beta``) is trained as in the dual-branch scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.components.batch_norm import fold_backward, fold_weights
from src.components.network import SpikingNetwork
from src.components.neurons import ResetMode, rect_surrogate
from src.components.tensor_ops import (
    fc_backward,
    maxpool2d,
    maxpool2d_backward,
    softmax_xent,
)
from src.exception import NonFiniteError, ShapeMismatchError

DEFAULT_SURROGATE_WIDTH = 1.0


@dataclass
class StepCache:
    layer_input: np.ndarray
    membrane: np.ndarray
    spikes: np.ndarray
    argmax: np.ndarray | None


@dataclass
class StbpResult:
    logits: np.ndarray
    counts: list[np.ndarray]
    pre_activations: list[np.ndarray] = field(repr=False)
    classifier_input: np.ndarray = field(repr=False)
    steps: list[list[StepCache]] = field(default_factory=list, repr=False)
    folded: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list, repr=False)


def stbp_forward(net: SpikingNetwork, batch: np.ndarray) -> StbpResult:
    batch = np.asarray(batch, dtype=net.dtype)
    if batch.shape[1:] != net.spec.input_shape:
        raise ShapeMismatchError(f"Batch shape {batch.shape[1:]} does not match network input {net.spec.input_shape}")
    time_steps = net.time_steps
    n = batch.shape[0]
    folded = [fold_weights(layer.weight.value, layer.bias.value, layer.bn, time_steps) for layer in net.layers]
    counts = [np.zeros((n,) + layer.stage.out_shape, dtype=np.int64) for layer in net.layers]
    summed_inputs = [None] * len(net.layers)
    steps: list[list[StepCache]] = [[] for _ in net.layers]
    for layer in net.layers:
        layer.neuron.reset_state()
        layer.neuron.set_threshold(layer.threshold)

    for _ in range(time_steps):
        layer_input = batch
        for index, layer in enumerate(net.layers):
            folded_weight, folded_bias = folded[index]
            current = layer.affine(layer_input, folded_weight, folded_bias)
            argmax = None
            if layer.stage.pool is not None:
                current, argmax = maxpool2d(current, *layer.stage.pool)
            try:
                spikes = layer.neuron.step(current)
            except NonFiniteError as e:
                raise NonFiniteError(f"Layer {index}: {e}") from e
            steps[index].append(
                StepCache(layer_input=layer_input, membrane=layer.neuron.membrane.copy(), spikes=spikes, argmax=argmax)
            )
            counts[index] += spikes.astype(np.int64)
            summed_inputs[index] = layer_input if summed_inputs[index] is None else summed_inputs[index] + layer_input
            layer_input = spikes

    pre_activations = [
        layer.affine(summed_inputs[index], layer.weight.value, layer.bias.value)
        for index, layer in enumerate(net.layers)
    ]
    if counts:
        classifier_input = counts[-1].astype(net.dtype).reshape(n, -1)
    else:
        classifier_input = (batch * net.dtype.type(time_steps)).reshape(n, -1)
    logits = net.classifier.forward(classifier_input)
    return StbpResult(
        logits=logits,
        counts=counts,
        pre_activations=pre_activations,
        classifier_input=classifier_input,
        steps=steps,
        folded=folded,
    )


def stbp_backward(
    net: SpikingNetwork,
    result: StbpResult,
    grad_logits: np.ndarray,
    surrogate_width: float = DEFAULT_SURROGATE_WIDTH,
) -> None:
    classifier = net.classifier
    grad_features, grad_weight, grad_bias = fc_backward(grad_logits, result.classifier_input, classifier.weight.value)
    classifier.weight.grad = grad_weight
    classifier.bias.grad = grad_bias
    if not net.layers:
        return

    time_steps = net.time_steps
    last_shape = result.counts[-1].shape
    # counts are the sum of spikes, so every step sees the same upstream gradient
    grad_spikes = [grad_features.reshape(last_shape)] * time_steps
    hard = net.spec.reset_mode is ResetMode.HARD

    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        folded_weight, _ = result.folded[index]
        caches = result.steps[index]
        threshold = layer.threshold

        grad_folded_weight = np.zeros_like(folded_weight)
        grad_folded_bias = np.zeros(folded_weight.shape[0], dtype=folded_weight.dtype)
        grad_inputs: list[np.ndarray] = [None] * time_steps
        later = None
        for t in range(time_steps - 1, -1, -1):
            cache = caches[t]
            grad_membrane = grad_spikes[t] * rect_surrogate(cache.membrane, threshold, surrogate_width)
            if later is not None:
                grad_membrane = grad_membrane + (later * (1 - cache.spikes) if hard else later)
            later = grad_membrane

            grad_current = grad_membrane
            if cache.argmax is not None:
                grad_current = maxpool2d_backward(
                    grad_current, cache.argmax, (grad_current.shape[0],) + layer.stage.affine_shape
                )
            grad_input, step_weight, step_bias = layer.affine_backward(grad_current, cache.layer_input, folded_weight)
            grad_folded_weight += step_weight
            grad_folded_bias += step_bias
            grad_inputs[t] = grad_input

        grad_w, grad_b, grad_gamma, grad_beta = fold_backward(
            grad_folded_weight,
            grad_folded_bias,
            layer.weight.value,
            layer.bias.value,
            layer.bn,
            time_steps,
        )
        layer.weight.grad = grad_w.astype(layer.weight.value.dtype, copy=False)
        layer.bias.grad = grad_b.astype(layer.bias.value.dtype, copy=False)
        layer.bn.gamma.grad = grad_gamma.astype(layer.bn.gamma.value.dtype, copy=False)
        layer.bn.beta.grad = grad_beta.astype(layer.bn.beta.value.dtype, copy=False)
        grad_spikes = grad_inputs


def stbp_gradients(
    net: SpikingNetwork,
    batch: np.ndarray,
    labels: np.ndarray,
    surrogate_width: float = DEFAULT_SURROGATE_WIDTH,
) -> tuple[float, StbpResult]:
    result = stbp_forward(net, batch)
    loss, grad_logits = softmax_xent(result.logits, labels)
    stbp_backward(net, result, grad_logits, surrogate_width=surrogate_width)
    return loss, result
