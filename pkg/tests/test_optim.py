import numpy as np
import pytest

from autodiff import tensor
from errors import ConfigError, ShapeError, TrainingError
from optim import OptimizerState, adam_step, early_stopping_due, reduce_lr_on_plateau


def _params(*values):
    return {f"p{i}": tensor(np.array(v, dtype=np.float64), requires_grad=True) for i, v in enumerate(values)}


# =============================================================================
# Adam
# =============================================================================

def test_zero_gradient_leaves_parameters_unchanged():
    params = _params([1.0, -2.0, 3.0])
    adam_step(OptimizerState(lr=1e-3), params, {"p0": np.zeros(3)})
    np.testing.assert_array_equal(params["p0"].data, [1.0, -2.0, 3.0])


def test_first_step_closed_form():
    start = np.array([0.5, -1.0, 2.0])
    g = np.array([0.3, -4.0, 1e-3])
    params = _params(start.copy())
    state = OptimizerState(lr=1e-3)
    adam_step(state, params, {"p0": g})
    # bias-corrected moments after one step are g and g**2
    expected = start - 1e-3 * g / (np.abs(g) + state.epsilon)
    np.testing.assert_allclose(params["p0"].data, expected, rtol=0, atol=1e-10)
    assert state.step == 1


def test_second_step_matches_reference_recursion():
    g1, g2 = np.array([0.2, -0.1]), np.array([-0.4, 0.3])
    params = _params([0.0, 0.0])
    state = OptimizerState(lr=0.01)
    adam_step(state, params, {"p0": g1})
    adam_step(state, params, {"p0": g2})
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    value = np.zeros(2)
    m = v = np.zeros(2)
    for step, g in enumerate((g1, g2), 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        value = value - 0.01 * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)
    np.testing.assert_allclose(params["p0"].data, value, rtol=1e-12)


def test_identical_gradient_sequences_give_identical_parameters(rng):
    grads = [rng.normal(size=4) for _ in range(5)]
    results = []
    for _ in range(2):
        params, state = _params(np.ones(4)), OptimizerState(lr=1e-2)
        for g in grads:
            adam_step(state, params, {"p0": g})
        results.append(params["p0"].data)
    np.testing.assert_array_equal(results[0], results[1])


def test_l2_applies_only_to_selected_parameters():
    params = _params([2.0], [2.0])
    state = OptimizerState(lr=1e-3)
    adam_step(state, params, {"p0": np.zeros(1), "p1": np.zeros(1)}, l2_set={"p0"}, l2=0.001)
    np.testing.assert_allclose(state.m["p0"], (1 - state.beta1) * 2 * 0.001 * 2.0)
    assert params["p0"].data[0] < 2.0
    assert params["p1"].data[0] == 2.0


def test_uses_tensor_gradients_by_default():
    params = _params([1.0])
    params["p0"].grad = np.array([0.5])
    adam_step(OptimizerState(lr=0.1), params)
    assert params["p0"].data[0] == pytest.approx(0.9, abs=1e-6)


def test_non_finite_gradient_names_the_parameter():
    params = _params([1.0], [1.0])
    with pytest.raises(TrainingError) as info:
        adam_step(OptimizerState(lr=1e-3), params, {"p0": np.array([0.1]), "p1": np.array([np.nan])},
                  epoch=3, batch=7)
    assert info.value.parameters == ("p1",)
    assert (info.value.epoch, info.value.batch) == (3, 7)
    assert params["p0"].data[0] == 1.0


def test_gradient_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step(OptimizerState(lr=1e-3), _params([1.0, 2.0]), {"p0": np.zeros(3)})


def test_state_round_trips_through_arrays_and_scalars(rng):
    params = _params(rng.normal(size=3))
    state = OptimizerState(lr=1e-3)
    adam_step(state, params, {"p0": rng.normal(size=3)})
    restored = OptimizerState.restore(state.scalars(), state.arrays())
    assert restored.step == 1
    np.testing.assert_array_equal(restored.v["p0"], state.v["p0"])


# =============================================================================
# Plateau decay and early stopping
# =============================================================================

def test_improving_history_keeps_learning_rate():
    state = OptimizerState(lr=1e-4)
    for epoch in range(1, 8):
        reduce_lr_on_plateau(state, [1.0 / e for e in range(1, epoch + 1)], patience=3)
    assert state.lr == 1e-4


def test_stagnation_past_patience_decays_once():
    state = OptimizerState(lr=1e-4)
    reduce_lr_on_plateau(state, [1.0, 0.9, 0.95, 0.96], patience=3)
    assert state.lr == 1e-4
    reduce_lr_on_plateau(state, [1.0, 0.9, 0.95, 0.96, 0.97], patience=3)
    assert state.lr == pytest.approx(2e-5)
    assert state.last_decay_epoch == 4


def test_decay_waits_patience_epochs_and_floors():
    state = OptimizerState(lr=1e-4)
    history = [1.0]
    lrs = []
    for _ in range(12):
        history.append(2.0)
        reduce_lr_on_plateau(state, history, factor=0.2, min_lr=1e-5, patience=3)
        lrs.append(state.lr)
    assert lrs[:2] == [1e-4, 1e-4]
    assert lrs[2] == pytest.approx(2e-5)
    assert lrs[3:5] == [lrs[2]] * 2
    assert lrs[5] == pytest.approx(1e-5)
    assert lrs[-1] == pytest.approx(1e-5)


def test_plateau_rejects_bad_factor():
    with pytest.raises(ConfigError):
        reduce_lr_on_plateau(OptimizerState(lr=1e-4), [1.0], factor=1.0)


def test_early_stopping():
    history = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94]
    assert not early_stopping_due(history, patience=5)
    assert early_stopping_due(history + [0.95], patience=5)
    assert not early_stopping_due(history + [0.8], patience=5)
    assert not early_stopping_due([], patience=5)
