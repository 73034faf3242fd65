"""Integrate-and-fire neurons, spike accumulation and the rectangle surrogate."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from src.components.tensor_ops import ensure_finite
from src.exception import ShapeMismatchError


class ResetMode(str, Enum):
    HARD = "hard"
    SOFT = "soft"


@dataclass
class IFNeuronLayer:
    """State of one layer of IF neurons during a time window.

    ``membrane`` holds the potential that was compared against the threshold
    at the last step; the reset implied by the last spikes is applied at the
    start of the next step.
    """

    threshold: float
    reset_mode: ResetMode = ResetMode.HARD
    membrane: np.ndarray | None = None
    last_spikes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.reset_mode = ResetMode(self.reset_mode)
        if not self.threshold > 0:
            raise ValueError(f"Firing threshold must be positive, got {self.threshold}")

    def reset_state(self) -> None:
        self.membrane = None
        self.last_spikes = None

    def set_threshold(self, threshold: float) -> None:
        if not threshold > 0:
            raise ValueError(f"Firing threshold must be positive, got {threshold}")
        self.threshold = float(threshold)

    def step(self, synaptic_input: np.ndarray) -> np.ndarray:
        if self.membrane is None:
            self.membrane = np.zeros_like(synaptic_input)
            self.last_spikes = np.zeros_like(synaptic_input)
        elif self.membrane.shape != synaptic_input.shape:
            raise ShapeMismatchError(
                f"Synaptic input shape {synaptic_input.shape} does not match membrane {self.membrane.shape}"
            )

        if self.reset_mode is ResetMode.HARD:
            self.membrane = self.membrane * (1 - self.last_spikes) + synaptic_input
        else:
            self.membrane = self.membrane + synaptic_input - self.last_spikes * self.threshold
        ensure_finite(self.membrane, "membrane potential")

        spikes = (self.membrane > self.threshold).astype(synaptic_input.dtype)
        self.last_spikes = spikes
        return spikes

    def residual_potential(self) -> np.ndarray:
        """Potential left after the reset of the final step (soft reset)."""
        if self.membrane is None:
            raise RuntimeError("No window has been run on this layer")
        if self.reset_mode is ResetMode.HARD:
            return self.membrane * (1 - self.last_spikes)
        return self.membrane - self.last_spikes * self.threshold


@dataclass
class SpikeAccumulator:
    counts: np.ndarray
    window: int

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"Time window must be at least 1, got {self.window}")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.size and (self.counts.min() < 0 or self.counts.max() > self.window):
            raise ValueError(f"Spike counts must lie in [0, {self.window}]")

    @classmethod
    def empty(cls, shape, window: int) -> "SpikeAccumulator":
        return cls(np.zeros(shape, dtype=np.int64), window)

    def add(self, spikes: np.ndarray) -> None:
        if spikes.shape != self.counts.shape:
            raise ShapeMismatchError(
                f"Spike tensor shape {spikes.shape} does not match accumulator {self.counts.shape}"
            )
        self.counts += spikes.astype(np.int64)


def if_step(layer: IFNeuronLayer, synaptic_input: np.ndarray) -> np.ndarray:
    return layer.step(synaptic_input)


def run_window(
    layer: IFNeuronLayer, per_step_inputs: Sequence[np.ndarray]
) -> tuple[SpikeAccumulator, list[np.ndarray]]:
    """Run a fresh window over ``per_step_inputs``; returns counts and spike trains."""
    window = len(per_step_inputs)
    if window == 0:
        raise ValueError("run_window needs at least one time step")
    layer.reset_state()
    accumulator = SpikeAccumulator.empty(np.shape(per_step_inputs[0]), window)
    trains = []
    for synaptic_input in per_step_inputs:
        spikes = layer.step(np.asarray(synaptic_input))
        accumulator.add(spikes)
        trains.append(spikes)
    return accumulator, trains


@dataclass
class RateIdentityResult:
    residual: np.ndarray
    clip_gap: np.ndarray
    rates: np.ndarray = field(repr=False)


def rate_identity_check(
    weights: np.ndarray,
    bias: np.ndarray,
    input_rates: np.ndarray,
    v_th: float,
    time_steps: int,
    reset_mode: ResetMode = ResetMode.SOFT,
) -> RateIdentityResult:
    """Drive a soft-reset layer with constant-rate input for ``time_steps``.

    ``residual`` compares the measured firing rate against the closed-form
    rate ``(W r + b) / V_th - u_T / (T V_th)`` and is zero up to rounding.
    ``clip_gap`` is the distance to the clipped rate ``clip((W r + b) / V_th, 0, 1)``,
    which only vanishes as the window grows.
    """
    if ResetMode(reset_mode) is not ResetMode.SOFT:
        raise ValueError("The rate identity only holds for soft-reset neurons")
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    input_rates = np.asarray(input_rates, dtype=np.float64)

    drive = input_rates @ weights.T + bias
    layer = IFNeuronLayer(threshold=v_th, reset_mode=ResetMode.SOFT)
    accumulator, _ = run_window(layer, [drive] * time_steps)

    rates = accumulator.counts / time_steps
    predicted = drive / v_th - layer.residual_potential() / (time_steps * v_th)
    residual = rates - predicted
    clip_gap = np.abs(rates - np.clip(drive / v_th, 0.0, 1.0))
    return RateIdentityResult(residual=residual, clip_gap=clip_gap, rates=rates)


def rect_surrogate(u: np.ndarray, v_th: float, a: float) -> np.ndarray:
    """Rectangle pseudo-derivative ``(1/a) * 1[|u - V_th| < a/2]``."""
    if not a > 0:
        raise ValueError(f"Surrogate width must be positive, got {a}")
    u = np.asarray(u)
    window = np.abs(u - v_th) < a / 2
    return (window / a).astype(u.dtype if u.dtype.kind == "f" else np.float64, copy=False)
