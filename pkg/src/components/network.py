"""Declarative architecture description and the weight-shared layers built from it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.components.batch_norm import DEFAULT_EPS, DEFAULT_MOMENTUM, BnState
from src.components.mapping_units import MappingKind, MappingUnit
from src.components.neurons import IFNeuronLayer, ResetMode
from src.components.tensor_ops import (
    DEFAULT_DTYPE,
    GradPair,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    fc_backward,
    fc_forward,
    pool_output_size,
)
from src.components.threshold import DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_TAU, AtaState
from src.exception import ShapeMismatchError

LAYER_KINDS = ("conv", "pool", "fc")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"Unknown layer kind '{self.kind}', expected one of {LAYER_KINDS}")
        if self.kind in ("conv", "fc") and self.out < 1:
            raise ValueError(f"{self.kind} layer needs a positive width, got {self.out}")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"Invalid kernel/stride/padding in {self}")

    @classmethod
    def conv(cls, channels: int, kernel: int = 3, stride: int = 1, padding: int = 0) -> "LayerSpec":
        return cls("conv", channels, kernel, stride, padding)

    @classmethod
    def pool(cls, kernel: int = 2, stride: int | None = None) -> "LayerSpec":
        return cls("pool", 0, kernel, stride or kernel, 0)

    @classmethod
    def fc(cls, features: int) -> "LayerSpec":
        return cls("fc", features)


@dataclass(frozen=True)
class StageSpec:
    """One parameterized layer after pooling has been attached to its convolution."""

    index: int
    kind: str
    in_shape: tuple[int, ...]
    affine_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    out: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    pool: tuple[int, int] | None = None
    classifier: bool = False

    @property
    def in_features(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def neurons(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv":
            return (self.out, self.in_shape[0], self.kernel, self.kernel)
        return (self.out, self.in_features)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    mapping_kind: MappingKind = MappingKind.STSU
    time_steps: int = 4
    reset_mode: ResetMode = ResetMode.HARD

    def __post_init__(self) -> None:
        if self.time_steps < 1:
            raise ValueError(f"Time window must be at least 1, got {self.time_steps}")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "mapping_kind", MappingKind(self.mapping_kind))
        object.__setattr__(self, "reset_mode", ResetMode(self.reset_mode))

    def validate(self) -> list[StageSpec]:
        stages = resolve_stages(self)
        if not stages or not stages[-1].classifier:
            raise ValueError("The final layer of a network must be a fully connected classifier")
        return stages

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [
                {"kind": l.kind, "out": l.out, "kernel": l.kernel, "stride": l.stride, "padding": l.padding}
                for l in self.layers
            ],
            "mapping_kind": self.mapping_kind.value,
            "time_steps": self.time_steps,
            "reset_mode": self.reset_mode.value,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "NetworkSpec":
        return cls(
            input_shape=tuple(payload["input_shape"]),
            layers=tuple(LayerSpec(**layer) for layer in payload["layers"]),
            mapping_kind=payload["mapping_kind"],
            time_steps=int(payload["time_steps"]),
            reset_mode=payload.get("reset_mode", ResetMode.HARD.value),
        )


def resolve_stages(spec: NetworkSpec) -> list[StageSpec]:
    """Attach every max-pool to the convolution before it and compute shapes."""
    stages: list[StageSpec] = []
    shape = tuple(spec.input_shape)
    layers = list(spec.layers)
    i = 0
    while i < len(layers):
        layer = layers[i]
        if layer.kind == "pool":
            raise ValueError(f"Max-pool at position {i} must directly follow a convolution")
        pool = None
        if layer.kind == "conv":
            if len(shape) != 3:
                raise ShapeMismatchError(f"Convolution at position {i} needs a [C,H,W] input, got {shape}")
            c_in, h, w = shape
            if layer.kernel > h + 2 * layer.padding or layer.kernel > w + 2 * layer.padding:
                raise ShapeMismatchError(f"Kernel {layer.kernel} too large for input {shape} at position {i}")
            h_out = conv_output_size(h, layer.kernel, layer.stride, layer.padding)
            w_out = conv_output_size(w, layer.kernel, layer.stride, layer.padding)
            affine_shape = (layer.out, h_out, w_out)
            out_shape = affine_shape
            if i + 1 < len(layers) and layers[i + 1].kind == "pool":
                pool_layer = layers[i + 1]
                if pool_layer.kernel > h_out or pool_layer.kernel > w_out:
                    raise ShapeMismatchError(
                        f"Pool window {pool_layer.kernel} larger than feature map {h_out}x{w_out}"
                    )
                pool = (pool_layer.kernel, pool_layer.stride)
                out_shape = (
                    layer.out,
                    pool_output_size(h_out, pool_layer.kernel, pool_layer.stride),
                    pool_output_size(w_out, pool_layer.kernel, pool_layer.stride),
                )
                i += 1
            stages.append(
                StageSpec(
                    index=len(stages),
                    kind="conv",
                    in_shape=shape,
                    affine_shape=affine_shape,
                    out_shape=out_shape,
                    out=layer.out,
                    kernel=layer.kernel,
                    stride=layer.stride,
                    padding=layer.padding,
                    pool=pool,
                )
            )
        else:
            out_shape = (layer.out,)
            stages.append(
                StageSpec(
                    index=len(stages),
                    kind="fc",
                    in_shape=shape,
                    affine_shape=out_shape,
                    out_shape=out_shape,
                    out=layer.out,
                    classifier=i == len(layers) - 1,
                )
            )
        shape = out_shape
        i += 1
    return stages


def _affine(stage: StageSpec, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if stage.kind == "conv":
        return conv2d_forward(x, weight, bias, stride=stage.stride, padding=stage.padding)
    return fc_forward(x.reshape(x.shape[0], -1), weight, bias)


def _affine_backward(stage: StageSpec, grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    if stage.kind == "conv":
        return conv2d_backward(grad_out, x, weight, stride=stage.stride, padding=stage.padding)
    grad_input, grad_weight, grad_bias = fc_backward(grad_out, x.reshape(x.shape[0], -1), weight)
    return grad_input.reshape(x.shape), grad_weight, grad_bias


@dataclass
class SharedLayer:
    """One hidden layer: a single parameter store read by both branches."""

    stage: StageSpec
    weight: GradPair
    bias: GradPair
    bn: BnState
    ata: AtaState
    neuron: IFNeuronLayer
    unit: MappingUnit

    @property
    def index(self) -> int:
        return self.stage.index

    @property
    def kind(self) -> str:
        return self.stage.kind

    @property
    def threshold(self) -> float:
        return self.ata.threshold

    def set_threshold(self, threshold: float) -> None:
        self.ata.threshold = float(threshold)
        self.neuron.set_threshold(threshold)

    def affine(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
        return _affine(self.stage, x, weight, bias)

    def affine_backward(self, grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
        return _affine_backward(self.stage, grad_out, x, weight)

    def parameters(self) -> dict[str, GradPair]:
        prefix = f"layer{self.index}"
        return {
            f"{prefix}.weight": self.weight,
            f"{prefix}.bias": self.bias,
            f"{prefix}.gamma": self.bn.gamma,
            f"{prefix}.beta": self.bn.beta,
        }


@dataclass
class Classifier:
    stage: StageSpec
    weight: GradPair
    bias: GradPair

    def forward(self, features: np.ndarray) -> np.ndarray:
        return fc_forward(features.reshape(features.shape[0], -1), self.weight.value, self.bias.value)

    def parameters(self) -> dict[str, GradPair]:
        return {"classifier.weight": self.weight, "classifier.bias": self.bias}


@dataclass
class SpikingNetwork:
    spec: NetworkSpec
    layers: list[SharedLayer]
    classifier: Classifier
    dtype: np.dtype = field(default=np.dtype(DEFAULT_DTYPE))

    @property
    def time_steps(self) -> int:
        return self.spec.time_steps

    def parameters(self) -> dict[str, GradPair]:
        params: dict[str, GradPair] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        params.update(self.classifier.parameters())
        return params

    def zero_grad(self) -> None:
        for pair in self.parameters().values():
            pair.zero_grad()

    def thresholds(self) -> list[float]:
        return [layer.threshold for layer in self.layers]

    def set_thresholds(self, thresholds: Sequence[float]) -> None:
        if len(thresholds) != len(self.layers):
            raise ShapeMismatchError(f"Expected {len(self.layers)} thresholds, got {len(thresholds)}")
        for layer, threshold in zip(self.layers, thresholds):
            layer.set_threshold(threshold)


def build_network(
    spec: NetworkSpec,
    seed: int = 0,
    dtype=DEFAULT_DTYPE,
    tau: float = DEFAULT_TAU,
    alpha: float = DEFAULT_ALPHA,
    epsilon: float = DEFAULT_EPSILON,
    bn_momentum: float = DEFAULT_MOMENTUM,
    bn_eps: float = DEFAULT_EPS,
) -> SpikingNetwork:
    """He-initialized weights, identity BN, thresholds drawn from U(0, 1]."""
    stages = spec.validate()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)

    layers: list[SharedLayer] = []
    for stage in stages[:-1]:
        fan_in = int(np.prod(stage.weight_shape[1:]))
        weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=stage.weight_shape).astype(dtype)
        threshold = float(1.0 - rng.random())
        layers.append(
            SharedLayer(
                stage=stage,
                weight=GradPair(weight),
                bias=GradPair(np.zeros(stage.out, dtype=dtype)),
                bn=BnState.identity(stage.out, dtype=dtype, alpha_bn=bn_momentum, eps_bn=bn_eps),
                ata=AtaState(threshold, tau=tau, alpha=alpha, epsilon=epsilon),
                neuron=IFNeuronLayer(threshold=threshold, reset_mode=spec.reset_mode),
                unit=MappingUnit(spec.mapping_kind),
            )
        )

    head = stages[-1]
    bound = 1.0 / np.sqrt(head.in_features)
    classifier = Classifier(
        stage=head,
        weight=GradPair(rng.uniform(-bound, bound, size=head.weight_shape).astype(dtype)),
        bias=GradPair(np.zeros(head.out, dtype=dtype)),
    )
    return SpikingNetwork(spec=spec, layers=layers, classifier=classifier, dtype=dtype)
