"""Finite-difference checks for every autodiff primitive."""

import numpy as np
import pytest

from lipgec import autodiff as ad
from lipgec.autodiff import Tensor
from lipgec.oracles import fd_gradient, relative_error

TOL = 1e-6


def check_op(build, *shapes, seed=0, tol=TOL):
    """build(tensors) -> scalar Tensor; FD-check grads of every input."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for i, (arr, t) in enumerate(zip(arrays, tensors)):
        def f(x, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x)
            return float(build(*args).data)

        fd = fd_gradient(f, arr.copy())
        assert t.grad is not None, f"input {i} got no gradient"
        assert relative_error(fd, t.grad, floor=1e-5) < tol, f"input {i} gradient mismatch"


class TestElementwise:
    def test_add_broadcast(self):
        check_op(lambda a, b: ad.sum_(ad.mul(ad.add(a, b), ad.add(a, b))), (3, 4), (4,))

    def test_mul_broadcast(self):
        check_op(lambda a, b: ad.sum_(ad.mul(a, b)), (2, 3, 4), (3, 1))

    def test_scalar_ops(self):
        check_op(lambda a: ad.sum_(ad.mul(ad.add(a, 2.0), -1.5)), (5,))

    def test_exp_log_power(self):
        check_op(lambda a: ad.sum_(ad.log(ad.add(ad.exp(a), 1.0))), (4, 3))
        check_op(lambda a: ad.sum_(ad.power(ad.add(ad.mul(a, a), 1.0), 0.5)), (6,))

    def test_tanh_gelu_relu(self):
        check_op(lambda a: ad.sum_(ad.tanh(a)), (7,))
        check_op(lambda a: ad.sum_(ad.gelu(a)), (3, 5), seed=3)
        # keep relu inputs away from the kink
        rng = np.random.default_rng(1)
        x = rng.standard_normal(20)
        x[np.abs(x) < 0.1] += 0.2
        t = Tensor(x, requires_grad=True)
        ad.sum_(ad.relu(t)).backward()
        fd = fd_gradient(lambda v: float(np.maximum(v, 0).sum()), x.copy())
        assert relative_error(fd, t.grad, floor=1e-5) < TOL


class TestMatmulShapes:
    def test_matmul_2d(self):
        check_op(lambda a, b: ad.sum_(ad.matmul(a, b)), (3, 4), (4, 5))

    def test_matmul_batched(self):
        check_op(lambda a, b: ad.sum_(ad.matmul(a, b)), (2, 3, 4), (2, 4, 5))

    def test_matmul_broadcast_weight(self):
        check_op(lambda a, b: ad.sum_(ad.matmul(a, b)), (2, 6, 3, 4), (4, 5))

    def test_reshape_transpose(self):
        check_op(
            lambda a: ad.sum_(ad.mul(ad.transpose(ad.reshape(a, (2, 3, 4)), (2, 0, 1)), 1.5)),
            (6, 4),
        )

    def test_concat_index(self):
        def build(a, b):
            c = ad.concat([a, b], axis=1)
            return ad.sum_(ad.mul(ad.index(c, (slice(None), slice(1, 5))), 2.0))

        check_op(build, (2, 3), (2, 4))

    def test_pad(self):
        check_op(lambda a: ad.sum_(ad.mul(ad.pad_const(a, ((1, 1), (2, 0))), 3.0)), (2, 3))


class TestGatherReduce:
    def test_take_axis_repeats(self):
        idx = np.array([[0, 2, 2], [1, 0, 2]])
        check_op(lambda a: ad.sum_(ad.mul(ad.take_axis(a, idx, axis=0), 1.3)), (3, 4))

    def test_take_axis_inner(self):
        idx = np.array([1, 1, 3, 0])
        check_op(lambda a: ad.sum_(ad.take_axis(a, idx, axis=1)), (2, 5, 3))

    def test_take_flat_repeats(self):
        idx = np.array([[0, 5, 5], [11, 3, 0]])
        check_op(lambda a: ad.sum_(ad.mul(ad.take_flat(a, idx), 0.7)), (3, 4))

    def test_sum_axes_keepdims(self):
        check_op(lambda a: ad.sum_(ad.mul(ad.sum_(a, axis=(0, 2), keepdims=True), a)), (2, 3, 4))

    def test_mean(self):
        check_op(lambda a: ad.sum_(ad.mul(ad.mean(a, axis=-1), 2.0)), (3, 5))

    def test_log_softmax(self):
        check_op(lambda a: ad.sum_(ad.mul(ad.log_softmax(a, axis=-1), np.arange(12.0).reshape(3, 4))), (3, 4))

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.standard_normal((4, 6)))
        s = ad.softmax(x, axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm(self):
        check_op(
            lambda x, g, b: ad.sum_(ad.mul(ad.layer_norm(x, g, b), 1.1)),
            (2, 4, 8),
            (8,),
            (8,),
        )


class TestGraphMechanics:
    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        y = ad.sum_(ad.add(ad.mul(x, x), x))  # d/dx = 2x + 1
        y.backward()
        np.testing.assert_allclose(x.grad, [5.0, 7.0])

    def test_no_grad_without_requires(self):
        x = Tensor(np.ones(3))
        y = ad.sum_(ad.mul(x, 2.0))
        y.backward()
        assert x.grad is None

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()

    def test_diamond_graph(self):
        x = Tensor(np.array(1.5), requires_grad=True)
        a = ad.mul(x, 2.0)
        b = ad.mul(x, 3.0)
        out = ad.sum_(ad.mul(a, b))  # 6x^2 -> d/dx = 12x
        out.backward()
        np.testing.assert_allclose(x.grad, 18.0)

    def test_deep_chain_no_recursion_limit(self):
        x = Tensor(np.array(0.5), requires_grad=True)
        y = x
        for _ in range(3000):
            y = ad.add(y, 0.001)
        ad.sum_(y).backward()
        np.testing.assert_allclose(x.grad, 1.0)
