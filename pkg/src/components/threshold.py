"""Adaptive threshold adjustment driven by noisy spikes.

A noisy spike is a spike at a position where the weight-shared ANN's ReLU
output is zero. Whenever the mean accumulated noise over noisy positions
exceeds the tolerance, the layer threshold grows by ``tau * (1 - alpha)``
of itself; otherwise it is left alone. Thresholds never decrease.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.exception import ShapeMismatchError

DEFAULT_TAU = 0.1
DEFAULT_ALPHA = 0.1
DEFAULT_EPSILON = 0.01


def noisy_positions(counts: np.ndarray, relu_out: np.ndarray) -> np.ndarray:
    counts = getattr(counts, "counts", counts)
    if counts.shape != relu_out.shape:
        raise ShapeMismatchError(
            f"Spike count shape {counts.shape} does not match ANN activation shape {relu_out.shape}"
        )
    return (counts > 0) & (relu_out == 0)


def noisy_spike_mass(counts: np.ndarray, relu_out: np.ndarray) -> tuple[int, float]:
    """Return ``(|Omega|, mean accumulated spikes over Omega)``."""
    counts = getattr(counts, "counts", counts)
    omega = noisy_positions(counts, relu_out)
    omega_size = int(omega.sum())
    if omega_size == 0:
        return 0, 0.0
    return omega_size, float(counts[omega].sum() / omega_size)


@dataclass
class AtaState:
    threshold: float
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    trajectory: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError(f"Threshold must be positive, got {self.threshold}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        self.threshold = float(self.threshold)
        if not self.trajectory:
            self.trajectory = [self.threshold]

    @property
    def growth_factor(self) -> float:
        return 1.0 + self.tau * (1.0 - self.alpha)


def ata_update(state: AtaState, mean_noise: float) -> float:
    """Apply one adjustment and return the new threshold."""
    xi = state.tau * max(0.0, float(np.sign(mean_noise - state.epsilon)))
    state.threshold = state.threshold * (1.0 + xi * (1.0 - state.alpha))
    state.trajectory.append(state.threshold)
    return state.threshold
