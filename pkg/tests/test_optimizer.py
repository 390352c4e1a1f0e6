import numpy as np
import pytest

from network.optimizer import AdamState, adam_step, lr_for_epoch
from schema.run_schema import LrSchedule
from utils.errors import NumericError, RangeError, ShapeError
from utils.tensor_core import make_rng


def test_first_step_on_unit_gradient():
    params = {"theta": np.zeros(1)}
    state = AdamState()
    adam_step(params, {"theta": np.ones(1)}, state, lr=1e-3)
    assert state.t == 1
    assert abs(params["theta"][0] + 1e-3) < 1e-8


def test_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=1e-3)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_converges_on_quadratic():
    params = {"w": make_rng(0).uniform(-0.5, 0.5, 10)}
    state = AdamState()
    for _ in range(2000):
        adam_step(params, {"w": 2.0 * params["w"]}, state, lr=1e-3)
    assert float(np.sum(params["w"] ** 2)) < 1e-3


def test_update_magnitude_bounded(rng):
    params = {"w": np.zeros(50)}
    state = AdamState()
    lr = 1e-2
    for _ in range(200):
        before = params["w"].copy()
        adam_step(params, {"w": rng.standard_normal(50) * rng.uniform(0.01, 100)}, state, lr)
        assert np.max(np.abs(params["w"] - before)) < 3 * lr
        assert np.all(state.v["w"] >= 0)


def test_identical_streams_identical_trajectories(rng):
    grads = [rng.standard_normal((3, 3)) for _ in range(10)]
    runs = []
    for _ in range(2):
        params, state = {"k": np.ones((3, 3))}, AdamState()
        for g in grads:
            adam_step(params, {"k": g}, state, 1e-3)
        runs.append(params["k"])
    np.testing.assert_array_equal(runs[0], runs[1])


def test_bad_steps_leave_state_untouched():
    params = {"a": np.zeros(2), "b": np.zeros(2)}
    state = AdamState()
    with pytest.raises(ShapeError):
        adam_step(params, {"a": np.ones(2), "b": np.ones(3)}, state, 1e-3)
    with pytest.raises(NumericError):
        adam_step(params, {"a": np.ones(2), "b": np.array([np.inf, 0.0])}, state, 1e-3)
    with pytest.raises(RangeError):
        adam_step(params, {"a": np.ones(2)}, state, 0.0)
    assert state.t == 0
    np.testing.assert_array_equal(params["a"], 0.0)


class TestSchedule:
    def test_default_table(self):
        schedule = LrSchedule()
        rates = [lr_for_epoch(schedule, e) for e in range(1, 12)]
        assert schedule.total_epochs == 11
        assert rates == [0.001] * 5 + [0.0001] * 3 + [0.00004] * 3

    @pytest.mark.parametrize("epoch", [0, 12])
    def test_out_of_range(self, epoch):
        with pytest.raises(RangeError):
            lr_for_epoch(LrSchedule(), epoch)

    def test_parse_and_format(self):
        schedule = LrSchedule.parse("5x0.001, 3x0.0001,3x0.00004")
        assert schedule.phases == [(5, 0.001), (3, 0.0001), (3, 0.00004)]
        assert str(schedule) == "5x0.001,3x0.0001,3x0.00004"

    @pytest.mark.parametrize("text", ["", "5", "0x0.1", "2x-1"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            LrSchedule.parse(text)
