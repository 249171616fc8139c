import numpy as np
import pytest

from pahs.errors import ShapeError
from pahs.tensorcore.tape import Tape
from pahs.traineval.losses import l1_loss, l1_loss_var


def test_l1_loss_value():
    L = np.array([[0.0, 0.5], [1.0, 0.25]])
    S = np.array([[0.5, 0.5], [0.0, 0.25]])
    assert l1_loss(L, S) == pytest.approx(0.375)


def test_l1_loss_var_gradient_is_sign_over_count():
    """Test that the taped L1 loss has gradient sign(L - S) / N"""
    tape = Tape()
    L = tape.leaf(np.array([1.0, -1.0, 2.0, 0.5]), name="L")
    S = np.array([0.0, 0.0, 3.0, 0.0])

    loss = l1_loss_var(L, S)
    grads = tape.backward(loss)

    assert float(loss.value) == pytest.approx(l1_loss(L.value, S))
    np.testing.assert_allclose(grads["L"], [0.25, -0.25, -0.25, 0.25])


def test_l1_loss_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        l1_loss(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        l1_loss_var(Tape().leaf(np.zeros(3), name="L"), np.zeros(4))
