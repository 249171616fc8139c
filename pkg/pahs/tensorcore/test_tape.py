import numpy as np
import pytest

from pahs.errors import ContractError
from pahs.tensorcore import ops
from pahs.tensorcore.tape import Tape, backward


def test_backward_of_sum_of_squares():
    """Test that d/dx sum(x*x) is 2x"""
    tape = Tape()
    x = tape.leaf(np.array([1.0, -2.0, 3.0]), name="x")

    loss = ops.total(ops.mul(x, x))
    grads = tape.backward(loss)

    np.testing.assert_array_equal(grads["x"], [2.0, -4.0, 6.0])


def test_shared_parent_accumulates():
    """Test that a value used twice receives both gradient contributions"""
    tape = Tape()
    x = tape.leaf(np.array([2.0]), name="x")

    loss = ops.total(ops.add(ops.scale(x, 3.0), ops.square(x)))
    grads = backward(tape, loss)

    np.testing.assert_allclose(grads["x"], [3.0 + 4.0])


def test_unused_leaf_gets_zeros():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)), name="x")
    unused = tape.leaf(np.full((3,), 5.0), name="unused")

    grads = tape.backward(ops.mean(x))

    np.testing.assert_array_equal(grads["unused"], np.zeros(3))
    np.testing.assert_allclose(grads["x"], np.full((2, 2), 0.25))
    assert unused.requires_grad


def test_constants_are_not_recorded():
    """Test that ops over constants only add no nodes to the tape"""
    tape = Tape()
    a = tape.constant(np.ones(3))

    ops.total(ops.mul(a, a))

    assert len(tape) == 0


def test_non_recording_tape():
    """Test that a non-recording tape computes values but refuses backward"""
    tape = Tape(record=False)
    x = tape.leaf(np.array([1.0, 2.0]), name="x")

    loss = ops.total(ops.square(x))

    assert float(loss.value) == 5.0
    assert len(tape) == 0
    with pytest.raises(ContractError):
        tape.backward(loss)


def test_backward_needs_scalar_loss():
    tape = Tape()
    x = tape.leaf(np.ones(3), name="x")
    with pytest.raises(ContractError):
        tape.backward(ops.square(x))


def test_duplicate_leaf_name_rejected():
    tape = Tape()
    tape.leaf(np.ones(1), name="w")
    with pytest.raises(ContractError):
        tape.leaf(np.ones(1), name="w")


def test_loss_from_other_tape_rejected():
    first, second = Tape(), Tape()
    x = first.leaf(np.ones(2), name="x")
    with pytest.raises(ContractError):
        second.backward(ops.total(x))


def test_broadcast_gradients_are_reduced():
    """Test that a broadcast operand receives a gradient of its own shape"""
    tape = Tape()
    x = tape.leaf(np.ones((2, 3)), name="x")
    b = tape.leaf(np.array([[1.0, 2.0, 3.0]]), name="b")

    grads = tape.backward(ops.total(ops.mul(x, b)))

    assert grads["b"].shape == (1, 3)
    np.testing.assert_array_equal(grads["b"], [[2.0, 2.0, 2.0]])
    np.testing.assert_array_equal(grads["x"], [[1.0, 2.0, 3.0]] * 2)


def test_softmax_gradient_rows_sum_to_zero():
    """Test that the softmax VJP leaves zero total gradient in every row"""
    rng = np.random.default_rng(7)
    tape = Tape()
    x = tape.leaf(rng.standard_normal((2, 5, 6)), name="x")
    y = ops.softmax_rows(x)

    constant = tape.backward(ops.total(ops.mul(y, np.full(y.shape, 3.0))))["x"]
    tape = Tape()
    x = tape.leaf(x.value, name="x")
    upstream = rng.standard_normal((2, 5, 6))
    weighted = tape.backward(ops.total(ops.mul(ops.softmax_rows(x), upstream)))["x"]

    np.testing.assert_allclose(constant.sum(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(constant, 0.0, atol=1e-12)
    np.testing.assert_allclose(weighted.sum(axis=-1), 0.0, atol=1e-12)
