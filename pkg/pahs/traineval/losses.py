"""
L1 reconstruction loss, as a plain number and as a taped op.
"""

import numpy as np

from pahs.errors import ShapeError
from pahs.tensorcore import ops
from pahs.tensorcore.tape import Var


def _check_pair(shape_l, shape_s) -> None:
    if tuple(shape_l) != tuple(shape_s):
        raise ShapeError("l1_loss", "shape", tuple(shape_s), tuple(shape_l))


def l1_loss(L: np.ndarray, S: np.ndarray) -> float:
    """Mean absolute difference over all elements"""
    L, S = np.asarray(L), np.asarray(S)
    _check_pair(L.shape, S.shape)
    return float(np.abs(L.astype(np.float64) - S.astype(np.float64)).mean())


def l1_loss_var(L: Var, S: np.ndarray) -> Var:
    """Differentiable :func:`l1_loss` of a tape value against a target array"""
    _check_pair(L.shape, np.shape(S))
    return ops.mean(ops.absolute(ops.sub(L, np.asarray(S, dtype=L.dtype))))
