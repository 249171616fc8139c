"""
Differentiable ops over :class:`~pahs.tensorcore.tape.Var` handles.

Forward values come from ``pahs.tensorcore.kernels``; each op registers the
vector-Jacobian product of its kernel. Gradients are carried in float64.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from pahs.errors import ContractError, ShapeError
from pahs.tensorcore import kernels as K
from pahs.tensorcore.kernels import ACC, ConvSpec
from pahs.tensorcore.tape import Tape, Var

Operand = Union[Var, np.ndarray, float]


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise ContractError("at least one operand must be a Var")


def _lift(tape: Tape, x: Operand) -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _f64(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).astype(ACC, copy=False)


def conv2d(x: Var, w: Var, b: Optional[Var], spec: ConvSpec) -> Var:
    tape = _tape_of(x, w)
    x, w = _lift(tape, x), _lift(tape, w)
    b = _lift(tape, b) if b is not None else None
    y = K.conv2d(x.value, w.value, None if b is None else b.value, spec)
    in_hw = x.shape[2:]

    def vjp(g):
        gx = K.conv_grad_input(g, w.value, in_hw, spec.stride, spec.padding)
        gw = K.conv_grad_weight(x.value, g, spec.kernel_size, spec.stride, spec.padding)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return tape.apply("conv2d", y, parents, vjp)


def conv2d_transpose(x: Var, w: Var, b: Optional[Var], spec: ConvSpec) -> Var:
    tape = _tape_of(x, w)
    x, w = _lift(tape, x), _lift(tape, w)
    b = _lift(tape, b) if b is not None else None
    y = K.conv2d_transpose(x.value, w.value, None if b is None else b.value, spec)

    def vjp(g):
        gx = K.conv_forward(g, w.value, spec.stride, spec.padding)
        gw = K.conv_grad_weight(g, x.value, spec.kernel_size, spec.stride, spec.padding)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return tape.apply("conv2d_transpose", y, parents, vjp)


def relu(x: Var) -> Var:
    y = K.relu(x.value)
    mask = x.value > 0
    return x.tape.apply("relu", y, (x,), lambda g: (g * mask,))


def sigmoid(x: Var) -> Var:
    y = K.sigmoid(x.value)
    s = _f64(y)
    return x.tape.apply("sigmoid", y, (x,), lambda g: (g * s * (1.0 - s),))


def softmax_rows(x: Var) -> Var:
    y = K.softmax_rows(x.value)
    s = _f64(y)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return x.tape.apply("softmax_rows", y, (x,), vjp)


def matmul(a: Operand, b: Operand) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    y = K.matmul(a.value, b.value)

    def vjp(g):
        ga = np.matmul(g, _f64(b.value).swapaxes(-1, -2))
        gb = np.matmul(_f64(a.value).swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return tape.apply("matmul", y, (a, b), vjp)


def avg_pool(x: Var, axis: int = -1) -> Var:
    y = K.avg_pool(x.value, axis=axis, keepdims=True)
    n = x.shape[axis]

    def vjp(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return x.tape.apply("avg_pool", y, (x,), vjp)


def fully_connected(x: Var, w: Var, b: Optional[Var]) -> Var:
    tape = _tape_of(x, w)
    x, w = _lift(tape, x), _lift(tape, w)
    b = _lift(tape, b) if b is not None else None
    y = K.fully_connected(x.value, w.value, None if b is None else b.value)

    def vjp(g):
        gx = np.matmul(g, _f64(w.value))
        g2 = g.reshape(-1, g.shape[-1])
        x2 = _f64(x.value).reshape(-1, x.shape[-1])
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return tape.apply("fully_connected", y, parents, vjp)


def add(a: Operand, b: Operand) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    y = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return tape.apply("add", y, (a, b), vjp)


def sub(a: Operand, b: Operand) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    y = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return tape.apply("sub", y, (a, b), vjp)


def mul(a: Operand, b: Operand) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    y = a.value * b.value

    def vjp(g):
        ga = _unbroadcast(g * _f64(b.value), a.shape)
        gb = _unbroadcast(g * _f64(a.value), b.shape)
        return ga, gb

    return tape.apply("mul", y, (a, b), vjp)


def scale(x: Var, factor: float) -> Var:
    y = (x.value * factor).astype(x.dtype, copy=False)
    return x.tape.apply("scale", y, (x,), lambda g: (g * factor,))


def concat(xs: Sequence[Var], axis: int = 1) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    y = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape.apply("concat", y, xs, vjp)


def reshape(x: Var, shape: Tuple[int, ...]) -> Var:
    y = x.value.reshape(shape)
    return x.tape.apply("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Var, axes: Tuple[int, ...]) -> Var:
    y = np.ascontiguousarray(x.value.transpose(axes))
    inverse = tuple(np.argsort(axes))
    return x.tape.apply("transpose", y, (x,), lambda g: (g.transpose(inverse),))


def absolute(x: Var) -> Var:
    y = np.abs(x.value)
    sign = np.sign(_f64(x.value))
    return x.tape.apply("abs", y, (x,), lambda g: (g * sign,))


def square(x: Var) -> Var:
    y = x.value * x.value
    return x.tape.apply("square", y, (x,), lambda g: (2.0 * g * _f64(x.value),))


def total(x: Var) -> Var:
    """Sum of all elements as a 0-d value"""
    y = np.asarray(_f64(x.value).sum(), dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).astype(ACC),)

    return x.tape.apply("sum", y, (x,), vjp)


def mean(x: Var) -> Var:
    """Mean of all elements as a 0-d value"""
    n = x.value.size
    y = np.asarray(_f64(x.value).sum() / n, dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g / n, x.shape).astype(ACC),)

    return x.tape.apply("mean", y, (x,), vjp)


def res_block(x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var:
    """x + conv(relu(conv(x)))"""
    c = x.shape[1]
    if w1.shape[:2] != (c, c):
        raise ShapeError("res_block", "channel", c, w1.shape[1])
    k = w1.shape[2]
    spec = ConvSpec(c, c, kernel_size=k, stride=1, padding=k // 2)
    inner = conv2d(relu(conv2d(x, w1, b1, spec)), w2, b2, spec)
    return add(x, inner)
