import numpy as np
import pytest

from inavit.errors import ConfigError, ShapeError
from inavit.optimizer import AdamW, OptimizerConfig, OptimizerState


def test_zero_gradient_only_decays_the_weights():
    cfg = OptimizerConfig(lr=1.0, weight_decay=0.1)
    params = {"w": np.array([2.0, -4.0])}
    new, _ = AdamW.step(params, {"w": np.zeros(2)}, OptimizerState.zeros_like(params, cfg))
    np.testing.assert_allclose(new["w"], [1.8, -3.6])


def test_first_step_moves_by_the_learning_rate():
    cfg = OptimizerConfig(lr=1e-3, weight_decay=0.0)
    params = {"w": np.array([0.0])}
    new, state = AdamW.step(params, {"w": np.array([1.0])}, OptimizerState.zeros_like(params, cfg))
    assert new["w"][0] == pytest.approx(-1e-3, rel=1e-6)
    assert state.step == 1


def test_step_does_not_modify_its_inputs():
    cfg = OptimizerConfig(lr=1e-2)
    params = {"w": np.ones(3)}
    grads = {"w": np.full(3, 0.5)}
    state = OptimizerState.zeros_like(params, cfg)
    AdamW.step(params, grads, state)
    np.testing.assert_array_equal(params["w"], np.ones(3))
    np.testing.assert_array_equal(state.first["w"], np.zeros(3))
    assert state.step == 0


def test_moments_accumulate_over_steps():
    cfg = OptimizerConfig(lr=1e-2, weight_decay=0.0)
    params = {"w": np.zeros(1)}
    state = OptimizerState.zeros_like(params, cfg)
    for _ in range(3):
        params, state = AdamW.step(params, {"w": np.ones(1)}, state)
    # constant gradients: every bias-corrected step has size lr
    assert params["w"][0] == pytest.approx(-3e-2, rel=1e-5)
    assert state.step == 3


def test_shape_mismatch_is_rejected():
    cfg = OptimizerConfig()
    params = {"w": np.zeros((2, 2))}
    with pytest.raises(ShapeError):
        AdamW.step(params, {"w": np.zeros(3)}, OptimizerState.zeros_like(params, cfg))


def test_parameter_dtype_is_preserved():
    cfg = OptimizerConfig()
    params = {"w": np.ones(2, dtype=np.float32)}
    new, _ = AdamW.step(params, {"w": np.ones(2)}, OptimizerState.zeros_like(params, cfg))
    assert new["w"].dtype == np.float32


@pytest.mark.parametrize("changes", [{"lr": 0.0}, {"beta1": 1.0}, {"weight_decay": -0.1}])
def test_invalid_hyperparameters_are_rejected(changes):
    with pytest.raises(ConfigError):
        OptimizerConfig(**changes)
