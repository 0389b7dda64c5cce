import numpy as np
import pytest

from mpoxmamba.errors import ConfigError, DimensionError
from mpoxmamba.gradcheck import grad_check
from mpoxmamba.ops import (
    batch_norm2d,
    channel_conv1d,
    conv2d,
    global_avg_pool,
    layer_norm,
    linear,
)
from mpoxmamba.tensor import Tensor


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def conv2d_direct(x, w, bias, stride, padding, groups):
    """Loop-based convolution oracle, independent of the im2col path."""
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    cpg = cin // groups
    opg = cout // groups
    for b in range(n):
        for oc in range(cout):
            g = oc // opg
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, g * cpg:(g + 1) * cpg,
                               i * stride:i * stride + kh,
                               j * stride:j * stride + kw]
                    out[b, oc, i, j] = (patch * w[oc]).sum()
            if bias is not None:
                out[b, oc] += bias[oc]
    return out


class TestConv2d:
    def test_identity_kernel_preserves_input(self):
        x = Tensor(np.ones((1, 1, 4, 4), dtype=np.float32))
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = conv2d(x, Tensor(w), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_stride2_halves_224(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 3, 224, 224)).astype(np.float32))
        w = Tensor(rng.normal(size=(32, 3, 3, 3)).astype(np.float32) * 0.1)
        out = conv2d(x, w, stride=2, padding=1)
        assert out.shape == (1, 32, 112, 112)

    def test_depthwise_all_ones_sums_window(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]]], dtype=np.float32)
        w = Tensor(np.ones((2, 1, 3, 3), dtype=np.float32))
        out = conv2d(Tensor(x), w, stride=1, padding=1, groups=2)
        assert out.data[0, 0, 0, 0] == 10.0
        # every 3x3 window covers the whole 2x2 map
        np.testing.assert_array_equal(out.data[0, 0], np.full((2, 2), 10.0))
        np.testing.assert_array_equal(out.data[0, 1], np.full((2, 2), 26.0))

    @pytest.mark.parametrize("stride,padding,groups", [
        (1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 1, 2), (2, 1, 4), (1, 0, 4),
    ])
    def test_matches_direct_convolution(self, stride, padding, groups):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(2, 4, 6, 5))
        w = rng.normal(size=(8, 4 // groups, 3, 3))
        b = rng.normal(size=8)
        got = conv2d(t64(x), t64(w), t64(b), stride=stride, padding=padding, groups=groups)
        want = conv2d_direct(x, w, b, stride, padding, groups)
        np.testing.assert_allclose(got.data, want, atol=1e-12)

    def test_depthwise_equals_per_channel_convolution(self):
        rng = np.random.default_rng(43)
        x = rng.normal(size=(1, 5, 7, 7))
        w = rng.normal(size=(5, 1, 3, 3))
        got = conv2d(t64(x), t64(w), stride=1, padding=1, groups=5).data
        for ch in range(5):
            solo = conv2d_direct(x[:, ch:ch + 1], w[ch:ch + 1], None, 1, 1, 1)
            np.testing.assert_allclose(got[:, ch:ch + 1], solo, atol=1e-12)

    def test_groups_must_divide_channels(self):
        x = Tensor(np.ones((1, 3, 4, 4)))
        w = Tensor(np.ones((4, 1, 3, 3)))
        with pytest.raises(ConfigError):
            conv2d(x, w, groups=2)

    def test_shape_mismatch_rejected(self):
        x = Tensor(np.ones((1, 3, 4, 4)))
        w = Tensor(np.ones((4, 2, 3, 3)))
        with pytest.raises(DimensionError):
            conv2d(x, w)

    @pytest.mark.parametrize("stride,padding,groups", [(1, 1, 1), (2, 1, 2), (1, 0, 1)])
    def test_gradients(self, stride, padding, groups):
        rng = np.random.default_rng(44)
        x = t64(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
        w = t64(rng.uniform(-1, 1, size=(4, 2 // groups, 3, 3)))
        b = t64(rng.uniform(-1, 1, size=4))
        op = lambda u, v, c: conv2d(u, v, c, stride=stride, padding=padding, groups=groups)
        report = grad_check(op, [x, w, b], tolerance=1e-6)
        assert report.passed, str(report)


class TestBatchNorm2d:
    def _stats(self, c, dtype=np.float32):
        return np.zeros(c, dtype=dtype), np.ones(c, dtype=dtype)

    def test_constant_input_collapses_to_beta(self):
        x = Tensor(np.full((2, 3, 4, 4), 7.0, dtype=np.float32))
        gamma, beta = Tensor(np.ones(3, dtype=np.float32)), Tensor(np.zeros(3, dtype=np.float32))
        mean, var = self._stats(3)
        out = batch_norm2d(x, gamma, beta, mean, var, training=True)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-4)

    def test_plus_minus_one_normalizes_to_itself(self):
        x = np.zeros((2, 1, 1, 1), dtype=np.float64)
        x[0], x[1] = -1.0, 1.0
        gamma, beta = t64(np.ones(1)), t64(np.zeros(1))
        mean, var = self._stats(1, np.float64)
        out = batch_norm2d(Tensor(x), gamma, beta, mean, var, training=True, eps=1e-12)
        np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-6)

    def test_infer_mode_affine(self):
        x = Tensor(np.ones((1, 1, 1, 1), dtype=np.float64))
        gamma, beta = t64([2.0]), t64([3.0])
        mean = np.zeros(1, dtype=np.float64)
        var = np.ones(1, dtype=np.float64)
        out = batch_norm2d(x, gamma, beta, mean, var, training=False, eps=0.0)
        np.testing.assert_allclose(out.data.ravel(), [5.0])

    def test_running_stats_update(self):
        rng = np.random.default_rng(1)
        x = rng.normal(loc=2.0, size=(4, 2, 3, 3))
        mean, var = self._stats(2, np.float64)
        batch_norm2d(t64(x), t64(np.ones(2)), t64(np.zeros(2)), mean, var,
                     training=True, momentum=0.1)
        batch_mean = x.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 0.1 * batch_mean, rtol=1e-12)
        count = 4 * 3 * 3
        unbiased = x.var(axis=(0, 2, 3)) * count / (count - 1)
        np.testing.assert_allclose(var, 0.9 + 0.1 * unbiased, rtol=1e-12)

    def test_zero_variance_never_divides_by_zero(self):
        x = Tensor(np.zeros((2, 1, 2, 2), dtype=np.float32))
        mean, var = self._stats(1)
        out = batch_norm2d(x, Tensor(np.ones(1, dtype=np.float32)),
                           Tensor(np.zeros(1, dtype=np.float32)), mean, var, training=True)
        assert np.isfinite(out.data).all()

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(2)
        x = t64(rng.uniform(-1, 1, size=(3, 2, 3, 3)))
        gamma = t64(rng.uniform(0.5, 1.5, size=2))
        beta = t64(rng.uniform(-0.5, 0.5, size=2))
        mean, var = np.zeros(2), np.ones(2)
        op = lambda u, g, b: batch_norm2d(u, g, b, mean, var, training=training)
        report = grad_check(op, [x, gamma, beta], tolerance=1e-6)
        assert report.passed, str(report)


class TestLayerNorm:
    def test_normalizes_last_axis(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6))
        out = layer_norm(t64(x), t64(np.ones(6)), t64(np.zeros(6))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        x = t64(rng.uniform(-1, 1, size=(2, 3, 5)))
        gamma = t64(rng.uniform(0.5, 1.5, size=5))
        beta = t64(rng.uniform(-0.5, 0.5, size=5))
        report = grad_check(lambda u, g, b: layer_norm(u, g, b), [x, gamma, beta], tolerance=1e-6)
        assert report.passed, str(report)


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        w = Tensor(np.eye(3, dtype=np.float32))
        np.testing.assert_array_equal(linear(x, w).data, x.data)

    def test_dot_product_by_hand(self):
        out = linear(Tensor(np.array([[2.0, 3.0]], dtype=np.float32)),
                     Tensor(np.array([[1.0, 1.0]], dtype=np.float32)),
                     Tensor(np.array([1.0], dtype=np.float32)))
        np.testing.assert_array_equal(out.data, [[6.0]])

    def test_feature_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 4))))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        x = t64(rng.uniform(-1, 1, size=(3, 4)))
        w = t64(rng.uniform(-1, 1, size=(2, 4)))
        b = t64(rng.uniform(-1, 1, size=2))
        report = grad_check(linear, [x, w, b], tolerance=1e-6)
        assert report.passed, str(report)


class TestGlobalAvgPool:
    def test_constant_map(self):
        x = Tensor(np.full((2, 3, 5, 5), 4.25, dtype=np.float32))
        np.testing.assert_allclose(global_avg_pool(x).data, 4.25)

    def test_small_mean(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 1, 2, 2))
        np.testing.assert_allclose(global_avg_pool(x).data, [[2.5]])

    def test_single_pixel_identity(self):
        x = Tensor(np.array([[[[3.5]], [[-1.0]]]], dtype=np.float32))
        np.testing.assert_array_equal(global_avg_pool(x).data, [[3.5, -1.0]])

    def test_gradients(self):
        rng = np.random.default_rng(6)
        x = t64(rng.uniform(-1, 1, size=(2, 3, 4, 4)))
        assert grad_check(global_avg_pool, [x], tolerance=1e-6).passed


class TestChannelConv1d:
    def test_zero_weights_give_zero(self):
        x = Tensor(np.ones((2, 8), dtype=np.float32))
        out = channel_conv1d(x, Tensor(np.zeros(3, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            channel_conv1d(Tensor(np.ones((1, 8))), Tensor(np.ones(4)))

    def test_interior_channels_mix_k_neighbors(self):
        x = np.zeros((1, 8), dtype=np.float64)
        x[0, 4] = 1.0
        w = np.array([1.0, 2.0, 3.0])
        out = channel_conv1d(t64(x), t64(w)).data[0]
        # out[j] = sum_i x[j + i - 1] w[i]
        np.testing.assert_allclose(out[3:6], [3.0, 2.0, 1.0])

    def test_gradients(self):
        rng = np.random.default_rng(7)
        x = t64(rng.uniform(-1, 1, size=(2, 6)))
        w = t64(rng.uniform(-1, 1, size=3))
        assert grad_check(channel_conv1d, [x, w], tolerance=1e-6).passed
