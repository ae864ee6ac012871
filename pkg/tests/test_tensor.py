"""Autodiff core sanity checks."""

import numpy as np
import pytest

from rgdepth.tensor import Tensor, concat, linear, matmul, narrow, relu


def test_add_mul_backward():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    ((a + b) * a).sum().backward()
    np.testing.assert_allclose(a.grad, [2 * 1 + 3, 2 * 2 + 4])
    np.testing.assert_allclose(b.grad, [1.0, 2.0])


def test_broadcast_backward_sums():
    gate = Tensor(np.ones((2, 1, 1)), requires_grad=True)
    x = Tensor(np.arange(8.0).reshape(2, 2, 2), requires_grad=True)
    (x * gate).sum().backward()
    np.testing.assert_allclose(gate.grad[:, 0, 0], [0 + 1 + 2 + 3, 4 + 5 + 6 + 7])
    np.testing.assert_allclose(x.grad, np.ones((2, 2, 2)))


def test_shared_parent_accumulates():
    a = Tensor(np.array([3.0]), requires_grad=True)
    (a * a).sum().backward()
    np.testing.assert_allclose(a.grad, [6.0])


def test_repeated_backward_accumulates_on_leaves():
    a = Tensor(np.array([2.0]), requires_grad=True)
    for _ in range(3):
        (a * 2.0).sum().backward()
    np.testing.assert_allclose(a.grad, [6.0])


def test_relu_masks_gradient():
    a = Tensor(np.array([-1.0, 0.5]), requires_grad=True)
    relu(a).sum().backward()
    np.testing.assert_allclose(a.grad, [0.0, 1.0])


def test_concat_narrow_roundtrip():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.full((3, 2), 2.0), requires_grad=True)
    c = concat([a, b], axis=0)
    piece = narrow(c, 0, 2, 3)
    np.testing.assert_array_equal(piece.data, b.data)
    piece.sum().backward()
    assert a.grad is None or np.all(a.grad == 0)
    np.testing.assert_allclose(b.grad, np.ones((3, 2)))


def test_matmul_and_linear_grads():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    matmul(a, b).sum().backward()
    ones = np.ones((3, 2))
    np.testing.assert_allclose(a.grad, ones @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ ones)

    v = Tensor(rng.standard_normal(4), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    bias = Tensor(rng.standard_normal(3), requires_grad=True)
    linear(v, w, bias).sum().backward()
    np.testing.assert_allclose(v.grad, w.data.T @ np.ones(3))
    np.testing.assert_allclose(w.grad, np.outer(np.ones(3), v.data))
    np.testing.assert_allclose(bias.grad, np.ones(3))


def test_matmul_rejects_non_2d():
    with pytest.raises(ValueError):
        matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 3))))


def test_dtype_preserved():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    out = relu(a * 2.0 + 1.0)
    assert out.dtype == np.float32
    out.sum().backward()
    assert a.grad.dtype == np.float32
