"""Reverse-mode autodiff tests.

Every op is checked against central finite differences. Draws that land
within a margin of a kink (relu, hinge, max ties) are resampled so the
finite-difference quotient stays meaningful; the kink behavior itself gets
explicit point tests.
"""

import numpy as np
import pytest

from netpoison.autodiff import (
    Tensor,
    add,
    add_const,
    backward,
    gather_rows,
    hinge_at,
    log_softmax_row,
    matmul,
    max_rows,
    mul,
    neg_log,
    pick,
    pow_const,
    relu,
    scale,
    sum_all,
    tanh,
)

EPS = 1e-6
RTOL = 1e-4


def fd_check(build, leaves, rng):
    """Compare backward() grads of the scalar build(*leaves) against central
    finite differences, element by element."""
    loss = build(*leaves)
    backward(loss)
    # A leaf that receives no gradient keeps grad=None; that reads as zero.
    grads = [np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy()
             for leaf in leaves]
    for leaf, grad in zip(leaves, grads):
        it = np.nditer(leaf.data, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = leaf.data[ix]
            leaf.data[ix] = orig + EPS
            up = float(build(*leaves).data)
            leaf.data[ix] = orig - EPS
            down = float(build(*leaves).data)
            leaf.data[ix] = orig
            fd = (up - down) / (2 * EPS)
            got = grad[ix]
            denom = max(abs(fd), abs(got), 1.0)
            assert abs(fd - got) / denom <= RTOL, (ix, fd, got)
            it.iternext()


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestMechanics:
    def test_backward_requires_scalar(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(Tensor(np.ones(3)))

    def test_leaf_grad_none_until_backward(self):
        a = Tensor(2.0)
        assert a.grad is None
        backward(sum_all(mul(a, a)))
        assert float(a.grad) == pytest.approx(4.0)

    def test_reused_tensor_accumulates(self):
        a = Tensor(3.0)
        loss = add(mul(a, a), a)  # a^2 + a
        backward(loss)
        assert float(a.grad) == pytest.approx(7.0)

    def test_repeated_backward_does_not_mix(self):
        a = Tensor(3.0)
        loss = mul(a, a)
        backward(loss)
        backward(loss)
        assert float(a.grad) == pytest.approx(6.0)

    def test_deep_chain_no_recursion_limit(self):
        x = Tensor(0.1)
        y = x
        for _ in range(5000):
            y = scale(y, 1.0001)
        backward(y)
        assert x.grad is not None and np.isfinite(x.grad)

    def test_operator_sugar(self):
        a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])
        assert (a @ b).data[0, 0] == pytest.approx(11.0)
        c = Tensor(2.0)
        assert float((c + c).data) == 4.0
        assert float((c * c).data) == 4.0
        assert float((-c).data) == -2.0


class TestOpGradients:
    def test_add_mul_scale(self):
        rng = np.random.default_rng(0)
        fd_check(lambda a, b: sum_all(mul(add(a, b), scale(a, 0.5))),
                 [_t(rng, 3, 4), _t(rng, 3, 4)], rng)

    def test_add_const(self):
        rng = np.random.default_rng(1)
        fd_check(lambda a: sum_all(pow_const(add_const(a, 1.7), 2.0)),
                 [_t(rng, 5)], rng)

    def test_broadcast_add(self):
        rng = np.random.default_rng(2)
        fd_check(lambda a, b: sum_all(pow_const(add(a, b), 2.0)),
                 [_t(rng, 4, 3), Tensor(rng.standard_normal((1, 3)))], rng)

    def test_broadcast_mul(self):
        rng = np.random.default_rng(3)
        fd_check(lambda a, b: sum_all(mul(a, b)),
                 [_t(rng, 4, 3), Tensor(rng.standard_normal((4, 1)))], rng)

    def test_matmul(self):
        rng = np.random.default_rng(4)
        fd_check(lambda a, b: sum_all(matmul(a, b)),
                 [_t(rng, 3, 5), _t(rng, 5, 2)], rng)

    def test_tanh(self):
        rng = np.random.default_rng(5)
        fd_check(lambda a: sum_all(tanh(a)), [_t(rng, 4, 4)], rng)

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(6)
        data = rng.standard_normal((4, 4))
        data[np.abs(data) < 1e-3] += 0.1  # keep FD off the kink
        fd_check(lambda a: sum_all(relu(a)), [Tensor(data)], rng)

    def test_pow_const(self):
        rng = np.random.default_rng(7)
        data = np.abs(rng.standard_normal((3, 3))) + 0.5
        fd_check(lambda a: sum_all(pow_const(a, -0.5)), [Tensor(data)], rng)

    def test_gather_rows(self):
        rng = np.random.default_rng(8)
        fd_check(lambda a: sum_all(pow_const(gather_rows(a, [2, 0]), 2.0)),
                 [_t(rng, 4, 3)], rng)

    def test_gather_rows_repeated_index(self):
        a = Tensor(np.arange(6.0).reshape(3, 2))
        backward(sum_all(gather_rows(a, [1, 1, 2])))
        assert np.array_equal(a.grad, [[0, 0], [2, 2], [1, 1]])

    def test_max_rows(self):
        rng = np.random.default_rng(9)
        # Well-separated rows so the argmax is FD-stable.
        data = rng.standard_normal((5, 3)) * 3.0
        fd_check(lambda a: sum_all(max_rows(a)), [Tensor(data)], rng)

    def test_sum_all_and_pick(self):
        rng = np.random.default_rng(10)
        fd_check(lambda a: pick(pow_const(a, 3.0), 1, 2), [_t(rng, 3, 4)], rng)

    def test_log_softmax_row(self):
        rng = np.random.default_rng(11)
        fd_check(lambda a: pick(log_softmax_row(a), 0, 1),
                 [Tensor(rng.standard_normal((1, 4)))], rng)

    def test_neg_log(self):
        rng = np.random.default_rng(12)
        data = np.abs(rng.standard_normal(())) + 0.5
        fd_check(lambda a: neg_log(a), [Tensor(data)], rng)

    def test_hinge_away_from_kink(self):
        fd_check(lambda a: hinge_at(a, 0.5), [Tensor(1.3)],
                 np.random.default_rng(13))
        fd_check(lambda a: hinge_at(a, 0.5), [Tensor(-0.8)],
                 np.random.default_rng(14))

    def test_composition_end_to_end(self):
        # A miniature two-layer network with every structural op involved.
        rng = np.random.default_rng(15)
        x = _t(rng, 6, 4)
        w1 = _t(rng, 4, 8)
        w2 = _t(rng, 8, 2)

        def net(x_, w1_, w2_):
            h = tanh(matmul(x_, w1_))
            z = max_rows(matmul(h, w2_))
            return neg_log(add_const(tanh(pick(z, 0, 0)), 1.5))

        fd_check(net, [x, w1, w2], rng)


class TestKinkBehavior:
    def test_relu_zero_at_origin(self):
        a = Tensor(np.array([[0.0, -1.0, 2.0]]))
        backward(sum_all(relu(a)))
        assert np.array_equal(a.grad, [[0.0, 0.0, 1.0]])

    def test_hinge_zero_at_threshold(self):
        a = Tensor(0.5)
        backward(hinge_at(a, 0.5))
        assert a.grad is None  # no accumulation means zero gradient

    def test_max_rows_tie_goes_to_lowest_row(self):
        a = Tensor(np.array([[2.0, 1.0], [2.0, 3.0]]))
        backward(sum_all(max_rows(a)))
        assert np.array_equal(a.grad, [[1.0, 0.0], [0.0, 1.0]])

    def test_max_rows_deterministic(self):
        data = np.ones((4, 3))
        grads = []
        for _ in range(2):
            a = Tensor(data.copy())
            backward(sum_all(max_rows(a)))
            grads.append(a.grad)
        assert np.array_equal(grads[0], grads[1])
        assert np.array_equal(grads[0], [[1, 1, 1], [0, 0, 0], [0, 0, 0], [0, 0, 0]])


class TestShapeGuards:
    def test_matmul_rejects_vectors(self):
        with pytest.raises(ValueError, match="2-D"):
            matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))

    def test_max_rows_rejects_non_2d(self):
        with pytest.raises(ValueError, match="2-D"):
            max_rows(Tensor(np.ones(3)))

    def test_log_softmax_row_shape(self):
        with pytest.raises(ValueError, match="1, k"):
            log_softmax_row(Tensor(np.ones((2, 3))))


class TestInvariants:
    def test_log_softmax_grad_rows_sum_to_zero(self):
        rng = np.random.default_rng(20)
        a = Tensor(rng.standard_normal((1, 6)))
        backward(pick(log_softmax_row(a), 0, 3))
        assert float(a.grad.sum()) == pytest.approx(0.0, abs=1e-12)

    def test_log_softmax_normalizes(self):
        rng = np.random.default_rng(21)
        a = Tensor(rng.standard_normal((1, 5)) * 30)  # large logits stay finite
        out = log_softmax_row(a)
        assert np.all(np.isfinite(out.data))
        assert float(np.exp(out.data).sum()) == pytest.approx(1.0)
