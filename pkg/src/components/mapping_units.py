"""Spiking mapping units: place accumulated spikes onto the ANN branch.

Forward returns spike counts (masked by ReLU activity for ReSU); backward is
the straight-through identity onto the ReLU output, so spike counts never
contribute to weight gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.exception import ShapeMismatchError


class MappingKind(str, Enum):
    RESU = "resu"
    STSU = "stsu"


def _as_counts(counts) -> np.ndarray:
    return getattr(counts, "counts", counts)


def _check_pair(relu_out: np.ndarray, counts: np.ndarray) -> None:
    if relu_out.shape != counts.shape:
        raise ShapeMismatchError(
            f"ANN activation shape {relu_out.shape} does not match spike count shape {counts.shape}"
        )


def resu_forward(relu_out: np.ndarray, counts) -> np.ndarray:
    counts = _as_counts(counts)
    _check_pair(relu_out, counts)
    return np.where(relu_out > 0, counts, 0).astype(relu_out.dtype)


def stsu_forward(relu_out: np.ndarray, counts) -> np.ndarray:
    # counts + x_r - c with c = x_r cancels exactly; x_r only carries the gradient
    counts = _as_counts(counts)
    _check_pair(relu_out, counts)
    return counts.astype(relu_out.dtype)


def resu_backward(grad_xq: np.ndarray) -> np.ndarray:
    return np.array(grad_xq, copy=True)


def stsu_backward(grad_xq: np.ndarray) -> np.ndarray:
    return np.array(grad_xq, copy=True)


_FORWARD = {MappingKind.RESU: resu_forward, MappingKind.STSU: stsu_forward}
_BACKWARD = {MappingKind.RESU: resu_backward, MappingKind.STSU: stsu_backward}


@dataclass
class MappingUnit:
    kind: MappingKind
    cached_relu: np.ndarray | None = field(default=None, repr=False)
    cached_counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.kind = MappingKind(self.kind)

    def forward(self, relu_out: np.ndarray, counts) -> np.ndarray:
        counts = _as_counts(counts)
        out = _FORWARD[self.kind](relu_out, counts)
        self.cached_relu = relu_out
        self.cached_counts = counts
        return out

    def backward(self, grad_xq: np.ndarray) -> np.ndarray:
        if self.cached_relu is None:
            raise RuntimeError(f"{self.kind.value} backward called before forward")
        if grad_xq.shape != self.cached_relu.shape:
            raise ShapeMismatchError(
                f"Upstream gradient shape {grad_xq.shape} does not match {self.cached_relu.shape}"
            )
        return _BACKWARD[self.kind](grad_xq)

    def clear(self) -> None:
        self.cached_relu = None
        self.cached_counts = None
