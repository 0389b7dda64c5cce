import numpy as np
import pytest

from mpoxmamba.errors import DimensionError
from mpoxmamba.gradcheck import grad_check
from mpoxmamba.tensor import (
    Tensor,
    concat,
    elementwise,
    exp,
    flip,
    matmul,
    no_grad,
    reshape,
    sigmoid,
    silu,
    softmax_lastdim,
    softplus,
    stack,
    transpose,
)


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestActivations:
    def test_silu_fixed_point_at_zero(self):
        assert silu(Tensor([0.0])).data[0] == 0.0

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_softmax_uniform(self):
        out = softmax_lastdim(Tensor([0.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = Tensor(rng.normal(scale=5.0, size=(4, 7)))
            out = softmax_lastdim(x).data
            np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
            assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_silu_matches_definition(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=17)
        expected = x / (1.0 + np.exp(-x))
        np.testing.assert_allclose(silu(Tensor(x)).data, expected, rtol=1e-6)

    def test_softplus_is_stable_for_large_inputs(self):
        out = softplus(Tensor([1000.0, -1000.0]))
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data[0], 1000.0)

    def test_elementwise_dispatch(self):
        x = Tensor([1.0, -1.0])
        np.testing.assert_array_equal(elementwise("relu", x).data, [1.0, 0.0])
        with pytest.raises(ValueError):
            elementwise("gelu", x)

    def test_forward_ops_are_pure(self):
        x = Tensor(np.linspace(-2, 2, 11))
        a = silu(x).data
        b = silu(x).data
        assert np.array_equal(a, b)
        assert np.array_equal(x.data, np.linspace(-2, 2, 11))


class TestActivationGradients:
    @pytest.mark.parametrize("fn", [silu, sigmoid, softplus, softmax_lastdim])
    def test_matches_finite_differences(self, fn):
        rng = np.random.default_rng(7)
        x = t64(rng.uniform(-1, 1, size=(3, 5)) + 0.1)
        report = grad_check(fn, [x], tolerance=1e-6)
        assert report.passed, str(report)

    def test_silu_derivative_at_one(self):
        x = t64([1.0])
        report = grad_check(silu, [x], tolerance=1e-6)
        assert report.passed, str(report)


class TestShapeOps:
    def test_reshape_transpose_flip_roundtrip(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 3, 4)))
        y = flip(transpose(x, (2, 0, 1)), axis=0)
        assert y.shape == (4, 2, 3)
        back = transpose(flip(y, axis=0), (1, 2, 0))
        np.testing.assert_array_equal(back.data, x.data)

    def test_concat_and_slice_gradients(self):
        rng = np.random.default_rng(4)
        a = t64(rng.normal(size=(2, 3)))
        b = t64(rng.normal(size=(2, 2)))
        report = grad_check(lambda u, v: concat([u, v], axis=1)[:, 1:4], [a, b], tolerance=1e-6)
        assert report.passed, str(report)

    def test_stack_gradient(self):
        rng = np.random.default_rng(5)
        a, b = t64(rng.normal(size=3)), t64(rng.normal(size=3))
        report = grad_check(lambda u, v: stack([u, v], axis=0), [a, b], tolerance=1e-6)
        assert report.passed, str(report)

    @pytest.mark.parametrize("fn", [
        lambda x: reshape(x, (6, 2)),
        lambda x: transpose(x, (1, 0, 2)),
        lambda x: flip(x, axis=1),
        lambda x: x.sum(axis=1),
        lambda x: x.mean(axis=(0, 2)),
    ])
    def test_structural_gradients(self, fn):
        rng = np.random.default_rng(6)
        x = t64(rng.normal(size=(3, 2, 2)))
        assert grad_check(fn, [x], tolerance=1e-6).passed


class TestArithmetic:
    def test_broadcast_gradients(self):
        rng = np.random.default_rng(8)
        a = t64(rng.normal(size=(2, 3)))
        b = t64(rng.normal(size=(3,)))
        assert grad_check(lambda u, v: u * v + v, [a, b], tolerance=1e-6).passed

    def test_matmul_gradients(self):
        rng = np.random.default_rng(9)
        a = t64(rng.normal(size=(4, 3)))
        b = t64(rng.normal(size=(3, 2)))
        assert grad_check(matmul, [a, b], tolerance=1e-6).passed

    def test_matmul_dim_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_dtype_mismatch_rejected(self):
        a = Tensor(np.ones(3, dtype=np.float32))
        b = Tensor(np.ones(3, dtype=np.float64))
        with pytest.raises(DimensionError):
            a + b

    def test_exp_gradient(self):
        x = t64([0.3, -0.7, 1.1])
        assert grad_check(exp, [x], tolerance=1e-6).passed


class TestAutodiffMachinery:
    def test_gradient_accumulates_over_multiple_uses(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x  # dy/dx = 2x + 1 = 5
        y.backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_backward_requires_scalar_without_seed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            (x * 2.0).backward()

    def test_no_grad_blocks_graph_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert y._vjp is None and not y.requires_grad

    def test_retain_grad_on_intermediate(self):
        x = Tensor([2.0], requires_grad=True)
        mid = x * 3.0
        mid.retain_grad()
        (mid * 2.0).backward()
        np.testing.assert_allclose(mid.grad, [2.0])
        np.testing.assert_allclose(x.grad, [6.0])

    def test_data_is_row_major_contiguous(self):
        x = Tensor(np.asfortranarray(np.ones((3, 4))))
        assert x.data.flags["C_CONTIGUOUS"]
