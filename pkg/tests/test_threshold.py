import numpy as np
import pytest

from src.components.threshold import AtaState, ata_update, noisy_positions, noisy_spike_mass


def test_noisy_mass_hand_case():
    counts = np.array([3, 0, 2])
    relu = np.array([0.0, 0.0, 1.5])
    np.testing.assert_array_equal(noisy_positions(counts, relu), [True, False, False])
    assert noisy_spike_mass(counts, relu) == (1, 3.0)


def test_no_noise_when_relu_all_positive():
    assert noisy_spike_mass(np.array([1, 2, 3]), np.ones(3)) == (0, 0.0)


def test_no_noise_when_silent():
    assert noisy_spike_mass(np.zeros(4, dtype=np.int64), np.zeros(4)) == (0, 0.0)


def test_ata_update_hand_value():
    state = AtaState(threshold=0.5, tau=0.1, alpha=0.1, epsilon=0.01)
    assert ata_update(state, 0.3) == pytest.approx(0.545)
    assert state.trajectory == pytest.approx([0.5, 0.545])


def test_ata_update_zero_noise_leaves_threshold():
    state = AtaState(threshold=0.5)
    assert ata_update(state, 0.0) == 0.5


def test_ata_update_at_tolerance_leaves_threshold():
    state = AtaState(threshold=0.5, epsilon=0.01)
    assert ata_update(state, 0.01) == 0.5


def test_thresholds_never_decrease():
    rng = np.random.default_rng(0)
    state = AtaState(threshold=0.3)
    for _ in range(50):
        ata_update(state, float(rng.random() * 0.05))
    assert np.all(np.diff(state.trajectory) >= 0)
    assert state.growth_factor == pytest.approx(1.09)


@pytest.mark.parametrize(
    "kwargs",
    [{"threshold": 0.0}, {"threshold": 1.0, "tau": 0.0}, {"threshold": 1.0, "alpha": 1.5}],
)
def test_invalid_parameters_rejected(kwargs):
    with pytest.raises(ValueError):
        AtaState(**kwargs)
