import numpy as np
import pytest

from src.components.mapping_units import (
    MappingKind,
    MappingUnit,
    resu_backward,
    resu_forward,
    stsu_backward,
    stsu_forward,
)
from src.components.neurons import SpikeAccumulator
from src.exception import ShapeMismatchError


def test_resu_masks_counts_by_relu_activity():
    out = resu_forward(np.array([0.5, 0.0, 1.2]), np.array([3, 2, 1]))
    np.testing.assert_array_equal(out, [3.0, 0.0, 1.0])


def test_resu_all_positive_passes_counts_through():
    counts = np.array([0, 4, 2, 1])
    np.testing.assert_array_equal(resu_forward(np.full(4, 0.3), counts), counts)


def test_resu_zero_counts():
    assert not resu_forward(np.array([1.0, 2.0]), np.zeros(2, dtype=np.int64)).any()


def test_stsu_returns_counts_for_any_relu():
    rng = np.random.default_rng(0)
    counts = np.array([0, 4, 2])
    for _ in range(5):
        relu = np.maximum(rng.normal(size=3), 0)
        out = stsu_forward(relu, counts)
        np.testing.assert_array_equal(out - counts, 0)


def test_forward_accepts_accumulators():
    accumulator = SpikeAccumulator(np.array([1, 2]), window=4)
    np.testing.assert_array_equal(stsu_forward(np.zeros(2), accumulator), [1.0, 2.0])


@pytest.mark.parametrize("backward", [resu_backward, stsu_backward])
def test_backward_is_identity(backward):
    g = np.array([0.3, -1.0, 2.5])
    np.testing.assert_array_equal(backward(g), g)
    assert not backward(np.zeros(3)).any()


def test_shape_mismatch_is_reported():
    with pytest.raises(ShapeMismatchError):
        resu_forward(np.zeros(3), np.zeros(4))


def test_unit_caches_forward_for_backward():
    unit = MappingUnit(MappingKind.RESU)
    with pytest.raises(RuntimeError, match="before forward"):
        unit.backward(np.ones(2))
    unit.forward(np.array([0.0, 1.0]), np.array([2, 2]))
    np.testing.assert_array_equal(unit.backward(np.array([5.0, 6.0])), [5.0, 6.0])
    unit.clear()
    assert unit.cached_relu is None


def test_unit_kind_from_string():
    assert MappingUnit("stsu").kind is MappingKind.STSU
