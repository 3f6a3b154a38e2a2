import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sritm.errors import ShapeError
from sritm.tensor import (
    ConvParams,
    Tensor,
    add,
    concat_channels,
    conv2d,
    div,
    mse_loss,
    mul,
    pixel_shuffle,
    relu,
    tsum,
)

from conftest import fd_gradient, rel_err


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def conv_params(w, b, requires_grad=False):
    return ConvParams(t64(w, requires_grad), t64(b, requires_grad))


def naive_conv(x, w, b):
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, co, h, wd))
    for ni in range(n):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    s = 0.0
                    for cc in range(ci):
                        for ki in range(k):
                            for kj in range(k):
                                s += xp[ni, cc, i + ki, j + kj] * w[o, cc, ki, kj]
                    out[ni, o, i, j] = s + b[o]
    return out


class TestConv2d:
    def test_ones_kernel_counts_footprint(self):
        x = t64(np.ones((1, 1, 3, 3)))
        p = conv_params(np.ones((1, 1, 3, 3)), np.zeros(1))
        out = conv2d(x, p).data[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0
        assert out[0, 1] == 6.0

    def test_1x1_identity(self, rng):
        x = t64(rng.uniform(-1, 1, (2, 1, 5, 5)))
        p = conv_params(np.ones((1, 1, 1, 1)), np.zeros(1))
        assert np.array_equal(conv2d(x, p).data, x.data)

    def test_matches_naive_loop_oracle(self, rng):
        x = rng.standard_normal((2, 4, 8, 8))
        w = rng.standard_normal((6, 4, 3, 3))
        b = rng.standard_normal(6)
        fast = conv2d(t64(x), conv_params(w, b)).data
        assert np.max(np.abs(fast - naive_conv(x, w, b))) < 1e-10

    def test_channel_mismatch_reports_shapes(self):
        x = t64(np.zeros((1, 2, 4, 4)))
        p = conv_params(np.zeros((3, 5, 3, 3)), np.zeros(3))
        with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(3, 5, 3, 3\)"):
            conv2d(x, p)

    def test_linearity_with_zero_bias(self, rng):
        x = rng.standard_normal((1, 3, 6, 6))
        y = rng.standard_normal((1, 3, 6, 6))
        p = conv_params(rng.standard_normal((4, 3, 3, 3)), np.zeros(4))
        a, b = 0.7, -1.3
        lhs = conv2d(t64(a * x + b * y), p).data
        rhs = a * conv2d(t64(x), p).data + b * conv2d(t64(y), p).data
        assert rel_err(lhs, rhs) < 1e-5

    def test_gradients_match_finite_differences(self, rng):
        x = t64(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
        p = conv_params(rng.standard_normal((2, 3, 3, 3)) * 0.5, rng.standard_normal(2), requires_grad=True)
        target = t64(rng.standard_normal((2, 2, 5, 5)))

        def loss():
            return mse_loss(conv2d(x, p), target)

        for leaf in (x, p.weight, p.bias):
            leaf.grad = None
        loss().backward()
        for leaf in (x, p.weight, p.bias):
            assert rel_err(leaf.grad, fd_gradient(loss, leaf)) < 1e-4


class TestRelu:
    def test_definition(self):
        assert np.array_equal(relu(t64([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_identity_on_nonnegative(self, rng):
        x = t64(rng.uniform(0, 5, (3, 4)))
        assert np.array_equal(relu(x).data, x.data)

    def test_gradient(self):
        x = t64([-1.0, 2.0], requires_grad=True)
        tsum(relu(x)).backward()
        assert np.array_equal(x.grad, [0.0, 1.0])
        x2 = t64([-0.5, 0.25, 3.0], requires_grad=True)
        fd = fd_gradient(lambda: tsum(relu(x2)), x2)
        x2.grad = None
        tsum(relu(x2)).backward()
        assert rel_err(x2.grad, fd) < 1e-4

    def test_subgradient_zero_at_zero(self):
        x = t64([0.0], requires_grad=True)
        tsum(relu(x)).backward()
        assert x.grad[0] == 0.0


class TestEltwise:
    def test_mul(self):
        assert np.array_equal(mul(t64([2.0, 3.0]), t64([4.0, 5.0])).data, [8.0, 15.0])

    def test_self_division_is_ones(self, rng):
        x = t64(rng.uniform(0.5, 2.0, (4, 4)))
        assert np.allclose(div(x, x).data, 1.0)

    def test_div_floor_clamps(self):
        out = div(t64([1.0]), t64([1e-9]), floor=1e-6)
        assert out.data[0] == pytest.approx(1e6)

    def test_div_strict_raises(self):
        with pytest.raises(ShapeError, match="floor"):
            div(t64([1.0]), t64([0.0]), strict=True)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(t64([1.0]), t64([1.0, 2.0]))

    def test_mul_gradient_is_other_operand(self, rng):
        a = t64(rng.standard_normal((3, 3)), requires_grad=True)
        b = t64(rng.standard_normal((3, 3)), requires_grad=True)
        tsum(mul(a, b)).backward()
        assert np.allclose(a.grad, b.data)
        assert np.allclose(b.grad, a.data)
        fd = fd_gradient(lambda: tsum(mul(a, b)), a)
        assert rel_err(a.grad, fd) < 1e-4

    def test_div_gradients(self, rng):
        a = t64(rng.uniform(0.5, 1.5, (4,)), requires_grad=True)
        b = t64(rng.uniform(0.5, 1.5, (4,)), requires_grad=True)

        def loss():
            return tsum(div(a, b))

        loss().backward()
        assert rel_err(a.grad, fd_gradient(loss, a)) < 1e-4
        assert rel_err(b.grad, fd_gradient(loss, b)) < 1e-4


class TestConcat:
    def test_layout(self, rng):
        a = t64(rng.standard_normal((1, 3, 4, 4)))
        b = t64(rng.standard_normal((1, 3, 4, 4)))
        out = concat_channels(a, b)
        assert out.shape == (1, 6, 4, 4)
        assert np.array_equal(out.data[:, :3], a.data)
        assert np.array_equal(out.data[:, 3:], b.data)

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            concat_channels(t64(np.zeros((1, 3, 4, 4))), t64(np.zeros((1, 3, 5, 4))))

    def test_gradient_routes_to_both(self, rng):
        a = t64(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        b = t64(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        tsum(concat_channels(a, b)).backward()
        assert np.array_equal(a.grad, np.ones_like(a.data))
        assert np.array_equal(b.grad, np.ones_like(b.data))


class TestPixelShuffle:
    def test_unrolled_definition(self):
        x = t64(np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 4, 1, 1))
        out = pixel_shuffle(x, 2)
        assert out.shape == (1, 1, 2, 2)
        assert np.array_equal(out.data[0, 0], [[0.0, 1.0], [2.0, 3.0]])

    def test_channel_shape_contract(self, rng):
        x = t64(rng.standard_normal((1, 256, 5, 5)))
        assert pixel_shuffle(x, 2).shape == (1, 64, 10, 10)

    def test_indivisible_channels(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(t64(np.zeros((1, 3, 2, 2))), 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 3), st.integers(1, 4), st.data())
    def test_bijection(self, c, r, h, data):
        values = data.draw(
            st.lists(st.floats(-10, 10, width=32), min_size=c * r * r * h * h, max_size=c * r * r * h * h)
        )
        x = np.asarray(values, dtype=np.float64).reshape(1, c * r * r, h, h)
        shuffled = pixel_shuffle(t64(x), r).data
        # inverse index map
        restored = np.zeros_like(x)
        for cc in range(c):
            for a in range(r):
                for b in range(r):
                    restored[0, cc * r * r + a * r + b] = shuffled[0, cc, a::r, b::r]
        assert np.array_equal(restored, x)

    def test_gradient_is_inverse_rearrangement(self, rng):
        x = t64(rng.standard_normal((1, 8, 3, 3)), requires_grad=True)
        tsum(mul(pixel_shuffle(x, 2), pixel_shuffle(x, 2))).backward()
        fd = fd_gradient(lambda: tsum(mul(pixel_shuffle(x, 2), pixel_shuffle(x, 2))), x)
        assert rel_err(x.grad, fd) < 1e-4


class TestBackward:
    def test_sum_gradient_all_ones(self, rng):
        x = t64(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        tsum(x).backward()
        assert np.array_equal(x.grad, np.ones_like(x.data))

    def test_quadratic(self, rng):
        x = t64(rng.standard_normal((5,)), requires_grad=True)
        tsum(mul(x, x)).backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_non_scalar_loss_rejected(self):
        x = t64(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            x.backward()

    def test_multiple_uses_accumulate(self, rng):
        x = t64(rng.standard_normal((4,)), requires_grad=True)
        y = t64(rng.standard_normal((4,)))
        # x used twice: once directly, once through a product
        loss = add(tsum(x), tsum(mul(x, y)))
        loss.backward()
        assert np.allclose(x.grad, 1.0 + y.data)

    def test_accumulation_matches_single_use_decomposition(self, rng):
        x = t64(rng.standard_normal((3, 3)), requires_grad=True)
        k = 3
        loss = tsum(x)
        for _ in range(k - 1):
            loss = add(loss, tsum(x))
        loss.backward()
        assert np.allclose(x.grad, float(k))


class TestMseLoss:
    def test_identical_is_zero(self, rng):
        x = rng.standard_normal((3, 3))
        assert float(mse_loss(t64(x), t64(x.copy())).data) == 0.0

    def test_unit_difference(self):
        assert float(mse_loss(t64(np.ones((4, 4))), t64(np.zeros((4, 4)))).data) == 1.0

    def test_gradient_formula_and_fd(self, rng):
        pred = t64(rng.standard_normal((2, 3)), requires_grad=True)
        target = t64(rng.standard_normal((2, 3)))
        mse_loss(pred, target).backward()
        expected = 2 * (pred.data - target.data) / pred.data.size
        assert np.allclose(pred.grad, expected)
        assert rel_err(pred.grad, fd_gradient(lambda: mse_loss(pred, target), pred)) < 1e-4
