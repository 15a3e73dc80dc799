"""Tape correctness for the base tensor ops.

Frozen scalar values were computed by hand or with an independent
numpy expression before being pinned here; gradient agreement is
checked against central differences.
"""

import numpy as np
import pytest

from scalescan.errors import ContractError, DomainError
from scalescan.gradcheck import assert_grads_match, grad_check
from scalescan import tensor as T
from scalescan.tensor import Tensor, no_grad


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# -- frozen forward oracles ---------------------------------------------------


def test_softplus_at_zero_is_ln2():
    x = Tensor(np.zeros(3))
    assert np.allclose(T.softplus(x).data, np.log(2.0), atol=1e-15)


def test_silu_at_zero_is_zero():
    assert T.silu(Tensor(np.zeros(4))).data.max() == 0.0


def test_sigmoid_frozen_values():
    x = Tensor(np.array([0.0, 2.0, -2.0]))
    got = T.sigmoid(x).data
    # 1/(1+e^-2) = 0.8807970779778823, recomputed independently
    want = np.array([0.5, 0.8807970779778823, 0.11920292202211755])
    assert np.allclose(got, want, atol=1e-15)


def test_matmul_frozen_2x2():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Tensor(np.array([[5.0], [6.0]]))
    assert np.array_equal(T.matmul(a, b).data, np.array([[17.0], [39.0]]))


def test_matmul_leading_axes_flatten():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(2, 3, 4)))
    w = Tensor(rng.normal(size=(4, 5)))
    got = T.matmul(a, w).data
    assert got.shape == (2, 3, 5)
    assert np.allclose(got, a.data @ w.data, atol=0)


def test_matmul_batched():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(3, 2, 4)))
    b = Tensor(rng.normal(size=(3, 4, 2)))
    assert np.allclose(T.matmul(a, b).data, a.data @ b.data, atol=0)


def test_matmul_shape_errors():
    a = Tensor(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        T.matmul(a, Tensor(np.zeros((4, 2))))
    with pytest.raises(ContractError):
        T.matmul(Tensor(np.zeros(3)), Tensor(np.zeros(3)))
    with pytest.raises(ContractError):
        T.matmul(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((3, 3, 2))))


# -- broadcast rules ----------------------------------------------------------


def test_broadcast_trailing_suffix_ok():
    x = Tensor(np.ones((2, 3, 4)))
    b = Tensor(np.arange(4.0))
    assert T.add(x, b).data.shape == (2, 3, 4)


def test_broadcast_scalar_ok():
    assert T.mul(Tensor(np.ones((2, 2))), 3.0).data.max() == 3.0


def test_broadcast_fancy_refused():
    # numpy would happily outer-broadcast these; the tape must not
    with pytest.raises(ContractError):
        T.add(Tensor(np.ones((3, 1))), Tensor(np.ones((1, 3))))


def test_broadcast_mismatch_refused():
    with pytest.raises(ContractError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


# -- autodiff mechanics ---------------------------------------------------------


def test_fanout_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = Tensor(np.array([5.0]), requires_grad=True)
    z = T.tsum(T.add(T.mul(x, y), x))
    z.backward()
    assert x.grad[0] == 6.0  # y + 1
    assert y.grad[0] == 2.0


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.mul(x, 2.0).backward()


def test_backward_needs_grad_path():
    with pytest.raises(ContractError):
        T.tsum(Tensor(np.ones(3))).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad and y._parents == ()


def test_detach_cuts_the_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.tsum(x.detach())
    assert not y.requires_grad


def test_item_rejects_vectors():
    with pytest.raises(ContractError):
        Tensor(np.ones(2)).item()


# -- domain errors --------------------------------------------------------------


def test_log_domain():
    with pytest.raises(DomainError):
        T.log(Tensor(np.array([1.0, 0.0])))


def test_sqrt_domain():
    with pytest.raises(DomainError):
        T.sqrt(Tensor(np.array([-0.1])))


# -- gradient checks -------------------------------------------------------------


@pytest.mark.parametrize("op", [T.exp, T.sigmoid, T.silu, T.softplus, T.neg])
def test_unary_grads(op):
    rng = np.random.default_rng(7)
    x = leaf(rng, 3, 4)
    assert_grads_match(lambda: T.tsum(T.mul(op(x), op(x))), {"x": x}, tol=1e-7)


def test_log_sqrt_grads():
    rng = np.random.default_rng(8)
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
    assert_grads_match(lambda: T.tsum(T.log(x)), {"x": x}, tol=1e-7)
    assert_grads_match(lambda: T.tsum(T.sqrt(x)), {"x": x}, tol=1e-7)


def test_binary_grads():
    rng = np.random.default_rng(9)
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)
    b.data += 3.0  # keep the divisor away from zero
    for op in (T.add, T.sub, T.mul, T.div):
        assert_grads_match(lambda op=op: T.tsum(op(a, b)), {"a": a, "b": b}, tol=1e-6)


def test_bias_broadcast_grad():
    rng = np.random.default_rng(10)
    x, b = leaf(rng, 4, 3), leaf(rng, 3)
    assert_grads_match(lambda: T.tsum(T.silu(T.add(x, b))), {"x": x, "b": b}, tol=1e-6)


def test_matmul_grads():
    rng = np.random.default_rng(11)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    assert_grads_match(lambda: T.tsum(T.silu(T.matmul(a, b))), {"a": a, "b": b}, tol=1e-6)
    c, d = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 3)
    assert_grads_match(lambda: T.tsum(T.sigmoid(T.matmul(c, d))), {"c": c, "d": d}, tol=1e-6)


def test_reduction_grads():
    rng = np.random.default_rng(12)
    x = leaf(rng, 3, 4)
    assert_grads_match(lambda: T.tsum(T.exp(T.tmean(x, axis=1))), {"x": x}, tol=1e-6)
    assert_grads_match(
        lambda: T.tsum(T.mul(T.tsum(x, axis=0, keepdims=True), 2.0)), {"x": x}, tol=1e-6)


def test_shape_op_grads():
    rng = np.random.default_rng(13)
    x = leaf(rng, 2, 3, 4)

    def loss():
        y = T.reshape(x, (6, 4))
        y = T.transpose(y)
        y = T.flip(y, 1)
        return T.tsum(T.silu(y))

    assert_grads_match(loss, {"x": x}, tol=1e-6)


def test_concat_narrow_grads():
    rng = np.random.default_rng(14)
    a, b = leaf(rng, 2, 3), leaf(rng, 4, 3)

    def loss():
        y = T.concat([a, b], axis=0)
        return T.tsum(T.mul(T.narrow(y, 0, 1, 4), T.narrow(y, 0, 2, 4)))

    assert_grads_match(loss, {"a": a, "b": b}, tol=1e-6)


def test_narrow_bounds():
    with pytest.raises(ContractError):
        T.narrow(Tensor(np.ones((3, 2))), 0, 2, 2)


def test_take_rows_duplicate_accumulation():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    y = T.tsum(T.take_rows(x, np.array([0, 0, 2])))
    y.backward()
    assert np.array_equal(x.grad, np.array([[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]))


def test_take_rows_permutation_grad():
    rng = np.random.default_rng(15)
    x = leaf(rng, 5, 3)
    perm = np.array([4, 2, 0, 3, 1])
    assert_grads_match(
        lambda: T.tsum(T.silu(T.take_rows(x, perm, permutation=True))),
        {"x": x}, tol=1e-6)


def test_take_rows_rejects_float_index():
    with pytest.raises(ContractError):
        T.take_rows(Tensor(np.ones((3, 2))), np.array([0.0, 1.0]))
