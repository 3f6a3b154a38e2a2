import numpy as np
import pytest

from sritm.errors import ShapeError
from sritm.optim import Adam, xavier_init
from sritm.tensor import Tensor


class TestXavierInit:
    def test_bias_is_zero(self):
        b = xavier_init((37,), 0, name="x.bias")
        assert b.requires_grad
        assert np.array_equal(b.data, np.zeros(37, dtype=np.float32))

    def test_glorot_bound_with_kernel_area(self):
        # fan_in = fan_out = 64*9 = 576 -> bound = sqrt(6/1152)
        bound = np.sqrt(6.0 / (576 + 576))
        assert bound == pytest.approx(0.07216878, abs=1e-8)
        w = xavier_init((64, 64, 3, 3), 0, name="w").data
        assert w.min() >= -bound and w.max() <= bound
        # the draw should actually fill the range
        assert w.max() > 0.9 * bound and w.min() < -0.9 * bound

    def test_deterministic_per_seed(self):
        a = xavier_init((8, 4, 3, 3), 5, name="conv.weight").data
        b = xavier_init((8, 4, 3, 3), 5, name="conv.weight").data
        c = xavier_init((8, 4, 3, 3), 6, name="conv.weight").data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_name_decorrelates_draws(self):
        a = xavier_init((8, 4, 3, 3), 5, name="conv1.weight").data
        b = xavier_init((8, 4, 3, 3), 5, name="conv2.weight").data
        assert not np.array_equal(a, b)

    def test_rejects_odd_ranks(self):
        with pytest.raises(ShapeError):
            xavier_init((3, 3), 0)


def make_param(value, name="p.weight"):
    t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    return {name: t}


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = make_param([1.0, -2.0])
        opt = Adam(params, lr_weights=0.1, lr_biases=0.01)
        params["p.weight"].grad = np.zeros(2)
        opt.step()
        assert np.array_equal(params["p.weight"].data, [1.0, -2.0])

    def test_first_step_hand_evaluated(self):
        # g=1, beta1=0.9, beta2=0.999, eps=1e-8, lr=0.1
        # m_hat = v_hat = 1 -> update = -lr / (1 + eps)
        params = make_param([0.0])
        opt = Adam(params, lr_weights=0.1, lr_biases=0.1)
        params["p.weight"].grad = np.ones(1)
        opt.step()
        expected = -0.1 * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert params["p.weight"].data[0] == pytest.approx(expected, rel=1e-12)
        assert opt.step_count == 1

    def test_bias_group_moves_ten_times_slower(self):
        params = {
            "layer.weight": Tensor(np.zeros(1), requires_grad=True, dtype=np.float64),
            "layer.bias": Tensor(np.zeros(1), requires_grad=True, dtype=np.float64),
        }
        opt = Adam(params, lr_weights=5e-7, lr_biases=5e-8)
        for p in params.values():
            p.grad = np.ones(1)
        opt.step()
        ratio = params["layer.weight"].data[0] / params["layer.bias"].data[0]
        assert ratio == pytest.approx(10.0, rel=1e-9)

    def test_shape_mismatch_rejected(self):
        params = make_param([1.0, 2.0])
        opt = Adam(params, 0.1, 0.1)
        params["p.weight"].grad = np.ones(3)
        with pytest.raises(ShapeError):
            opt.step()

    def test_converges_on_quadratic(self, rng):
        target = rng.standard_normal(4)
        params = make_param(np.zeros(4))
        opt = Adam(params, lr_weights=0.05, lr_biases=0.05)
        p = params["p.weight"]
        for _ in range(500):
            p.grad = 2 * (p.data - target)
            opt.step()
        assert np.max(np.abs(p.data - target)) < 1e-3

    def test_state_roundtrip(self):
        params = make_param([1.0, 2.0])
        opt = Adam(params, 0.1, 0.1)
        params["p.weight"].grad = np.array([0.5, -0.5])
        opt.step()
        saved = {k: v.copy() for k, v in opt.state_tensors().items()}
        step = opt.step_count

        opt2 = Adam(make_param([0.0, 0.0]), 0.1, 0.1)
        opt2.load_state_tensors(saved, step)
        assert opt2.step_count == 1
        assert np.array_equal(opt2.m["p.weight"], opt.m["p.weight"])
        assert np.array_equal(opt2.v["p.weight"], opt.v["p.weight"])

    def test_state_rejects_unknown_name(self):
        opt = Adam(make_param([1.0]), 0.1, 0.1)
        with pytest.raises(ShapeError, match="does not match"):
            opt.load_state_tensors({"m.other": np.zeros(1)}, 1)
