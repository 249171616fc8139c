"""
Pure numpy kernels the PAHS network is built from.

Every function here is a pure function of its arguments. Reductions accumulate
in float64 whatever the input precision and cast back to the input dtype, and
they always contract in the same order so results are bit-reproducible.

The gradient helpers (``*_grad_*``) are the adjoint pieces used by the tape in
``pahs.tensorcore.tape``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pahs.errors import ContractError, ShapeError

ACC = np.float64


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of a square-kernel 2-D convolution.

    Direct convs take weights shaped (out, in, k, k). Transposed convs take
    (in, out, k, k), so a transposed conv with the same weight array is the
    adjoint of the direct conv mapping out -> in.
    """

    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    transposed: bool = False
    bias: bool = True
    output_padding: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ContractError(f"invalid conv spec {self}")
        if self.output_padding >= self.stride and self.output_padding > 0:
            raise ContractError("output_padding must be smaller than stride")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        k = self.kernel_size
        if self.transposed:
            return (self.in_channels, self.out_channels, k, k)
        return (self.out_channels, self.in_channels, k, k)

    @property
    def fan_in(self) -> int:
        k = self.kernel_size
        if self.transposed:
            # each output pixel sees roughly in*k*k/stride^2 inputs
            return max(1, self.in_channels * k * k // (self.stride * self.stride))
        return self.in_channels * k * k

    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        if self.transposed:
            op = self.output_padding
            return ((h - 1) * s - 2 * p + k + op, (w - 1) * s - 2 * p + k + op)
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def transpose(self) -> "ConvSpec":
        """The adjoint spec: swaps channel roles and the transposed flag"""
        return ConvSpec(
            in_channels=self.out_channels,
            out_channels=self.in_channels,
            kernel_size=self.kernel_size,
            stride=self.stride,
            padding=self.padding,
            transposed=not self.transposed,
            bias=self.bias,
            output_padding=(2 * self.padding - self.kernel_size) % self.stride
            if not self.transposed
            else 0,
        )


def _check_conv_input(x: np.ndarray, w: np.ndarray, spec: ConvSpec, name: str):
    if x.ndim != 4:
        raise ShapeError(name, "rank", 4, x.ndim)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(name, "channel", spec.in_channels, x.shape[1])
    if tuple(w.shape) != spec.weight_shape:
        raise ShapeError(f"{name}.weight", "weight", spec.weight_shape, w.shape)
    ho, wo = spec.output_size(x.shape[2], x.shape[3])
    if ho <= 0:
        raise ShapeError(name, "height", "positive output", ho)
    if wo <= 0:
        raise ShapeError(name, "width", "positive output", wo)


def _windows(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Ho, Wo, k, k) read-only view of the strided patches of xp"""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Direct correlation, weights (O, C, k, k), no bias, float64 result"""
    k = w.shape[2]
    xp = _pad(x.astype(ACC, copy=False), padding)
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    win = _windows(xp, k, stride, ho, wo)
    out = np.tensordot(win, w.astype(ACC, copy=False), axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_grad_input(
    gy: np.ndarray, w: np.ndarray, in_hw: Tuple[int, int], stride: int, padding: int
) -> np.ndarray:
    """Adjoint of ``conv_forward`` with respect to its input, float64 result"""
    k = w.shape[2]
    n, _, ho, wo = gy.shape
    h, wd = in_hw
    gy64, w64 = gy.astype(ACC, copy=False), w.astype(ACC, copy=False)
    cols = np.tensordot(gy64, w64, axes=([1], [0]))
    # cols: (N, Ho, Wo, C, k, k)
    gxp = np.zeros((n, w.shape[1], h + 2 * padding, wd + 2 * padding), dtype=ACC)
    for i in range(k):
        for j in range(k):
            patch = cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            rows = slice(i, i + stride * ho, stride)
            cols_ = slice(j, j + stride * wo, stride)
            gxp[:, :, rows, cols_] += patch
    if padding:
        gxp = gxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(gxp)


def conv_grad_weight(
    x: np.ndarray, gy: np.ndarray, k: int, stride: int, padding: int
) -> np.ndarray:
    """Gradient of ``conv_forward`` with respect to (O, C, k, k) weights"""
    ho, wo = gy.shape[2], gy.shape[3]
    xp = _pad(x.astype(ACC, copy=False), padding)
    win = _windows(xp, k, stride, ho, wo)
    return np.tensordot(gy.astype(ACC, copy=False), win, axes=([0, 2, 3], [0, 2, 3]))


def conv2d(
    x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray], spec: ConvSpec
) -> np.ndarray:
    """2-D convolution (cross-correlation) following ``spec``"""
    if spec.transposed:
        raise ContractError("conv2d needs a direct spec; use conv2d_transpose")
    _check_conv_input(x, w, spec, "conv2d")
    out = conv_forward(x, w, spec.stride, spec.padding)
    if spec.bias:
        if b is None or b.shape != (spec.out_channels,):
            actual = getattr(b, "shape", None)
            raise ShapeError("conv2d.bias", "channel", spec.out_channels, actual)
        out += b.astype(ACC)[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def conv2d_transpose(
    x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray], spec: ConvSpec
) -> np.ndarray:
    """Transposed convolution: the exact adjoint of ``conv2d`` with the same weights"""
    if not spec.transposed:
        raise ContractError("conv2d_transpose needs a transposed spec")
    _check_conv_input(x, w, spec, "conv2d_transpose")
    out_hw = spec.output_size(x.shape[2], x.shape[3])
    out = conv_grad_input(x, w, out_hw, spec.stride, spec.padding)
    if spec.bias:
        if b is None or b.shape != (spec.out_channels,):
            actual = getattr(b, "shape", None)
            raise ShapeError(
                "conv2d_transpose.bias", "channel", spec.out_channels, actual
            )
        out += b.astype(ACC)[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def res_block(
    x: np.ndarray,
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: np.ndarray,
) -> np.ndarray:
    """x + conv(relu(conv(x))) with 3x3 / pad 1 convs of the block width"""
    c = x.shape[1]
    if w1.shape[:2] != (c, c):
        raise ShapeError("res_block", "channel", c, w1.shape[1])
    spec = ConvSpec(c, c, kernel_size=w1.shape[2], stride=1, padding=w1.shape[2] // 2)
    return x + conv2d(relu(conv2d(x, w1, b1, spec)), w2, b2, spec)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes, leading axes broadcast"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", "rank", ">=2", min(a.ndim, b.ndim))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", "inner", a.shape[-1], b.shape[-2])
    out = np.matmul(a.astype(ACC, copy=False), b.astype(ACC, copy=False))
    return out.astype(np.result_type(a, b), copy=False)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with per-row max subtraction"""
    z = m.astype(ACC, copy=False)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=-1, keepdims=True)).astype(m.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, clipped so finite inputs stay inside (0, 1)"""
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.dtype(ACC)
    z = x.astype(ACC, copy=False)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    info = np.finfo(dtype)
    out = np.clip(out, info.tiny, 1.0 - info.epsneg)
    return out.astype(dtype, copy=False)


def avg_pool(x: np.ndarray, axis: int = -1, keepdims: bool = True) -> np.ndarray:
    """Arithmetic mean over ``axis``"""
    return x.astype(ACC, copy=False).mean(axis=axis, keepdims=keepdims).astype(x.dtype)


def fully_connected(
    x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray]
) -> np.ndarray:
    """Affine map over the last axis: x @ w.T + b, w shaped (out, in)"""
    if w.ndim != 2:
        raise ShapeError("fully_connected.weight", "rank", 2, w.ndim)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError("fully_connected", "feature", w.shape[1], x.shape[-1])
    out = np.matmul(x.astype(ACC, copy=False), w.astype(ACC, copy=False).T)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError("fully_connected.bias", "feature", w.shape[0], b.shape)
        out = out + b.astype(ACC)
    return out.astype(x.dtype, copy=False)
