"""Model geometry, parameter counts and inference-mode behavior."""
import numpy as np
import pytest

from autodiff import numerical_gradient
from errors import ConfigError, ShapeError
from fpbilstm import L2_PARAMETERS, FPbiLSTM, ModelConfig, predict, summarize
from layers import mse_loss, one_hot

from conftest import tiny_model_config


def _inputs(rng, cfg, batch=3, length=40):
    return [rng.normal(size=(batch, length, w)) for w in cfg.channel_widths]


# =============================================================================
# Geometry and parameter counts
# =============================================================================

def test_default_tap_geometry_at_1200_samples():
    cfg = ModelConfig()
    assert cfg.tap_lengths(1200) == {1: 599, 2: 298, 3: 148, 5: 35}
    assert {t: cfg.tap_width(t) for t in cfg.pyramid_taps} == {1: 160, 2: 320, 3: 320, 5: 640}
    summary = summarize(cfg, 1200)
    assert summary.pyramid_vector == 1024


def test_default_parameter_count():
    summary = summarize(ModelConfig(), 1200)
    assert summary.parameter_count == 3_066_718
    assert summary.parameter_count == pytest.approx(3.1e6, rel=0.05)
    assert summary.non_trainable_count == 2 * 5 * (64 + 64 + 128) + 2 * 11


def test_last_tap_only_parameter_count():
    count = FPbiLSTM(ModelConfig(pyramid_taps=(5,))).parameter_count()
    assert count == 1_752_926
    assert count == pytest.approx(1.8e6, rel=0.10)


def test_dropping_a_tap_removes_its_bilstm_and_dense_inputs():
    full = FPbiLSTM(ModelConfig()).parameter_count()
    without_first = FPbiLSTM(ModelConfig(pyramid_taps=(2, 3, 5))).parameter_count()
    bilstm_tap1 = 2 * 4 * 128 * (160 + 128 + 1)
    assert full - without_first == bilstm_tap1 + 2 * 128 * 128


def test_parameter_count_grows_with_depth():
    base = ModelConfig()
    counts = [FPbiLSTM(base.for_depth(d)).parameter_count() for d in range(1, 6)]
    assert counts == sorted(counts) and len(set(counts)) == 5
    assert FPbiLSTM(base.replace(num_conv_layers=1, pyramid_taps=(1,))).parameter_count() < counts[-1]


def test_for_depth_keeps_remaining_default_taps():
    base = ModelConfig()
    assert base.for_depth(1).pyramid_taps == (1,)
    assert base.for_depth(4).pyramid_taps == (1, 2, 3, 4)
    assert base.for_depth(5).pyramid_taps == (1, 2, 3, 5)


def test_parameter_names():
    names = set(FPbiLSTM(tiny_model_config()).named_parameters())
    assert {"stream0.bn1.gamma", "stream4.conv3.kernel", "tap2.backward_recurrent", "dense2.bias"} <= names
    assert "stream0.bn2.gamma" not in names
    assert L2_PARAMETERS <= names


@pytest.mark.parametrize("settings", [
    {"channel_widths": (2,)},
    {"num_conv_layers": 6},
    {"pyramid_taps": ()},
    {"num_conv_layers": 3, "pyramid_taps": (1, 5)},
    {"dense_sizes": (128, 7)},
    {"bilstm_units": 0},
])
def test_invalid_model_config(settings):
    with pytest.raises(ConfigError):
        ModelConfig(**settings)


def test_short_input_is_rejected():
    with pytest.raises(ShapeError):
        ModelConfig().tap_lengths(80)


def test_config_dict_round_trip():
    cfg = tiny_model_config(widths=(1, 3))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "dropout": 0.5})


def test_summary_text_lists_layers():
    text = summarize(tiny_model_config(), 40).to_text()
    assert "tap3" in text and "stream4.conv1" in text


# =============================================================================
# Forward pass
# =============================================================================

def test_output_is_a_distribution(rng, tiny_config):
    probs = FPbiLSTM(tiny_config, seed=1).forward(_inputs(rng, tiny_config)).data
    assert probs.shape == (3, 8)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_identical_frames_give_identical_rows(rng, tiny_config):
    one = [x[:1] for x in _inputs(rng, tiny_config)]
    batch = [np.repeat(x, 4, axis=0) for x in one]
    probs = FPbiLSTM(tiny_config).forward(batch).data
    np.testing.assert_allclose(probs, np.repeat(probs[:1], 4, axis=0), rtol=1e-12)


def test_batch_permutation_permutes_outputs(rng, tiny_config):
    model = FPbiLSTM(tiny_config, seed=2)
    inputs = _inputs(rng, tiny_config, batch=5)
    order = np.array([3, 0, 4, 1, 2])
    probs = model.forward(inputs).data
    permuted = model.forward([x[order] for x in inputs]).data
    np.testing.assert_allclose(permuted, probs[order], rtol=1e-10)


def test_predict_proba_batches_match_forward(rng, tiny_config):
    model = FPbiLSTM(tiny_config)
    inputs = _inputs(rng, tiny_config, batch=7)
    np.testing.assert_allclose(model.predict_proba(inputs, batch_size=3), model.forward(inputs).data, rtol=1e-12)


def test_tap_shapes(rng, tiny_config):
    _, taps = FPbiLSTM(tiny_config).forward(_inputs(rng, tiny_config), return_taps=True)
    assert {t: x.shape for t, x in taps.items()} == {1: (3, 19, 20), 2: (3, 8, 20), 3: (3, 3, 20)}


def test_channel_widths_are_checked(rng, tiny_config):
    model = FPbiLSTM(tiny_config)
    with pytest.raises(ShapeError):
        model.forward(_inputs(rng, tiny_config)[:4])


def test_parameter_gradients_match_finite_differences(rng):
    cfg = tiny_model_config(widths=(1, 3), bilstm_units=2)
    model = FPbiLSTM(cfg, seed=4)
    inputs = _inputs(rng, cfg, batch=2)
    target = one_hot([2, 7], 8)
    # inference mode keeps batch statistics out of the comparison
    model.zero_grad()
    mse_loss(model.forward(inputs), target).backward()
    def loss():
        return float(mse_loss(model.forward(inputs), target).data)

    picker = np.random.default_rng(0)
    for name, param in model.named_parameters().items():
        size = param.data.size
        chosen = picker.choice(size, size=max(1, size // 100), replace=False)
        numeric = numerical_gradient(loss, param.data, eps=1e-6, indices=chosen)
        np.testing.assert_allclose(param.grad.reshape(-1)[chosen], numeric.reshape(-1)[chosen],
                                   rtol=1e-4, atol=1e-8, err_msg=name)


def test_state_dict_restores_outputs(rng, tiny_config):
    source, target = FPbiLSTM(tiny_config, seed=1), FPbiLSTM(tiny_config, seed=2)
    source.forward(_inputs(rng, tiny_config), training=True)
    target.load_state(source.state_dict())
    inputs = _inputs(rng, tiny_config)
    np.testing.assert_array_equal(target.forward(inputs).data, source.forward(inputs).data)


def test_load_state_rejects_other_architecture(tiny_config):
    other = FPbiLSTM(tiny_model_config(pyramid_taps=(3,)))
    with pytest.raises(ShapeError):
        FPbiLSTM(tiny_config).load_state(other.state_dict())


# =============================================================================
# predict
# =============================================================================

def test_predict_picks_highest_score_and_smallest_id_on_ties():
    probs = np.vstack([one_hot([4], 8)[0], np.full(8, 0.125), [0.1, 0.3, 0.3, 0.1, 0.05, 0.05, 0.05, 0.05]])
    np.testing.assert_array_equal(predict(probs), [4, 1, 2])
