import numpy as np
import pytest

from sritm.errors import ShapeError
from sritm.tensor import Tensor, mse_loss, resize_bicubic, tsum

from conftest import fd_gradient, rel_err


def cubic_key(x):
    # Keys kernel with a = -0.5, written out independently of the engine
    ax = abs(x)
    if ax <= 1:
        return 1.5 * ax**3 - 2.5 * ax**2 + 1
    if ax < 2:
        return -0.5 * ax**3 + 2.5 * ax**2 - 4 * ax + 2
    return 0.0


def oracle_resize_1d(src, scale, antialias):
    """Straight-line per-output weighted sum with border clamping."""
    n_in = len(src)
    n_out = int(round(n_in * scale))
    kscale = min(scale, 1.0) if antialias else 1.0
    support = 2.0 / kscale
    out = np.zeros(n_out)
    for d in range(n_out):
        center = d / scale
        left = int(np.ceil(center - support))
        right = int(np.floor(center + support))
        acc = 0.0
        wsum = 0.0
        for i in range(left, right + 1):
            w = cubic_key((i - center) * kscale)
            acc += w * src[min(max(i, 0), n_in - 1)]
            wsum += w
        out[d] = acc / wsum
    return out


class TestResizeBicubic:
    @pytest.mark.parametrize("scale", [0.25, 0.5, 2.0, 4.0])
    def test_constant_partition_of_unity(self, scale):
        x = Tensor(np.full((1, 2, 8, 8), 0.73), dtype=np.float64)
        out = resize_bicubic(x, scale, antialias=True)
        assert out.shape[2] == int(8 * scale)
        assert np.max(np.abs(out.data - 0.73)) < 1e-6

    def test_upscale_preserves_source_aligned_samples(self, rng):
        src = rng.uniform(0, 1, (1, 1, 6, 6))
        out = resize_bicubic(Tensor(src, dtype=np.float64), 2.0, antialias=False).data
        # output position 2i samples source coordinate i exactly
        assert np.max(np.abs(out[:, :, ::2, ::2] - src)) < 1e-6

    def test_downscale_ramp_matches_kernel_sum_oracle(self):
        ramp = np.arange(8, dtype=np.float64)
        expected = oracle_resize_1d(ramp, 0.5, antialias=True)
        x = Tensor(np.tile(ramp, (1, 1, 8, 1)), dtype=np.float64)
        out = resize_bicubic(x, 0.5, antialias=True).data
        # rows are constant along the ramp axis after the vertical pass
        assert np.max(np.abs(out[0, 0, 0] - expected)) < 1e-12

    def test_2d_separability_matches_oracle(self, rng):
        src = rng.uniform(0, 1, 12)
        img = np.outer(src, src)
        expected = np.outer(oracle_resize_1d(src, 0.5, True), oracle_resize_1d(src, 0.5, True))
        out = resize_bicubic(Tensor(img[None, None], dtype=np.float64), 0.5, antialias=True).data[0, 0]
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_non_integral_output_rejected(self):
        with pytest.raises(ShapeError, match="non-integral"):
            resize_bicubic(Tensor(np.zeros((1, 1, 5, 5))), 0.5)

    def test_antialias_changes_downscale(self, rng):
        x = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)), dtype=np.float64)
        with_aa = resize_bicubic(x, 0.5, antialias=True).data
        without = resize_bicubic(x, 0.5, antialias=False).data
        assert not np.allclose(with_aa, without)

    def test_gradient_matches_finite_differences(self, rng):
        x = Tensor(rng.uniform(0, 1, (1, 1, 4, 4)), dtype=np.float64, requires_grad=True)
        target = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)), dtype=np.float64)

        def loss():
            return mse_loss(resize_bicubic(x, 2.0, antialias=False), target)

        loss().backward()
        assert rel_err(x.grad, fd_gradient(loss, x)) < 1e-4

    def test_downscale_gradient(self, rng):
        x = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)), dtype=np.float64, requires_grad=True)

        def loss():
            out = resize_bicubic(x, 0.5, antialias=True)
            return tsum(mse_loss(out, Tensor(np.zeros_like(out.data), dtype=np.float64)))

        loss().backward()
        assert rel_err(x.grad, fd_gradient(loss, x)) < 1e-4
