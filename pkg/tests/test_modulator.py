import numpy as np
import pytest

from errors import ConfigError
from models import ModulePartition
from optim import ModulatorState, compute_mu, default_tau, enable_updates, force_unit_mu, smooth_mu
from variance import PhiEstimate


def _phi(names, values):
    values = np.asarray(values, dtype=float)
    return PhiEstimate(list(names), values, 1.0 - values, 1.0)


def test_equal_phi_gives_unit_mu(two_scalar_modules):
    state = ModulatorState(two_scalar_modules)
    np.testing.assert_array_equal(compute_mu(_phi(['a', 'b'], [3e-4, 3e-4]), state), [1.0, 1.0])


def test_mu_is_square_root_of_phi_ratio(two_scalar_modules):
    state = ModulatorState(two_scalar_modules)
    raw = compute_mu(_phi(['a', 'b'], [4e-4, 1e-4]), state)
    assert raw[0] == 1.0
    assert raw[1] == pytest.approx(2.0, rel=1e-7)


def test_vanishing_phi_is_clipped(two_scalar_modules):
    state = ModulatorState(two_scalar_modules)
    raw = compute_mu(_phi(['a', 'b'], [4e-4, 0.0]), state)
    assert raw[1] == 10.0
    raw = compute_mu(_phi(['a', 'b'], [0.0, 4e-4]), state)
    assert raw[1] == 0.1


def test_anchor_other_than_first_module():
    partition = ModulePartition((('a', (0,)), ('b', (1,)), ('c', (2,))), ((1,), (1,), (1,)), anchor_index=1)
    raw = compute_mu(_phi(['a', 'b', 'c'], [1e-2, 4e-2, 4e-2]), ModulatorState(partition))
    assert raw[1] == 1.0
    assert raw[0] == pytest.approx(2.0)
    assert raw[2] == pytest.approx(1.0)


def test_phi_must_cover_the_partition(two_scalar_modules):
    with pytest.raises(ConfigError):
        compute_mu(_phi(['a', 'c'], [1.0, 1.0]), ModulatorState(two_scalar_modules))


def test_smoothing_examples(two_scalar_modules):
    state = ModulatorState(two_scalar_modules, alpha=0.97)
    smooth_mu(state, np.array([1.0, 2.0]))
    assert state.mu[1] == pytest.approx(1.03)
    assert state.mu[0] == 1.0

    state = ModulatorState(two_scalar_modules, alpha=0.0)
    smooth_mu(state, np.array([1.0, 4.0]))
    np.testing.assert_array_equal(state.mu, [1.0, 4.0])

    state = ModulatorState(two_scalar_modules, mu=np.array([1.0, 10.0]))
    smooth_mu(state, np.array([1.0, 10.0]))
    assert state.mu[1] == pytest.approx(10.0)
    assert state.updates == 1


def test_clip_and_anchor_hold_under_adversarial_phi():
    partition = ModulePartition(tuple((f'm{i}', (i,)) for i in range(4)), ((1,),) * 4)
    state = ModulatorState(partition, tau=1, alpha=0.5)
    rng = np.random.default_rng(0)
    extremes = np.array([0.0, 1e-300, 1e-30, 1e-12, 1.0, 2.0, 1e30, np.inf])
    bound = (1 - state.alpha) * (state.clip_hi - state.clip_lo)
    for t in range(1, 1001):
        values = rng.choice(extremes, size=4)
        before = state.mu.copy()
        if state.due(t):
            smooth_mu(state, compute_mu(_phi(state.names, values), state))
        assert np.all(state.mu >= 0.1) and np.all(state.mu <= 10.0)
        assert state.mu[0] == 1.0
        assert np.all(np.abs(state.mu - before) <= bound + 1e-12)


def test_updates_happen_only_on_interval_steps(two_scalar_modules):
    state = ModulatorState(two_scalar_modules, tau=10)
    assert not state.due(0)
    assert [t for t in range(1, 31) if state.due(t)] == [10, 20, 30]


def test_force_unit_mu_and_reenable(two_scalar_modules):
    state = ModulatorState(two_scalar_modules, mu=np.array([1.0, 3.0]), tau=5)
    force_unit_mu(state)
    np.testing.assert_array_equal(state.mu, [1.0, 1.0])
    assert not state.due(5)
    assert state.is_update_step(5)
    enable_updates(state)
    assert state.due(5)


def test_effective_learning_rate(two_scalar_modules):
    state = ModulatorState(two_scalar_modules, mu=np.array([1.0, 2.5]))
    np.testing.assert_allclose(state.effective_lr(0.1), [0.1, 0.25])


def test_default_interval_shrinks_for_large_batches():
    assert default_tau(256) == 10
    assert default_tau(1024) == 10
    assert default_tau(2048) == 5


def test_invalid_settings_are_rejected(two_scalar_modules):
    with pytest.raises(ConfigError):
        ModulatorState(two_scalar_modules, alpha=1.0)
    with pytest.raises(ConfigError):
        ModulatorState(two_scalar_modules, tau=0)
    with pytest.raises(ConfigError):
        ModulatorState(two_scalar_modules, clip_lo=2.0)
