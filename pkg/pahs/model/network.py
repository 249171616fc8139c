"""
The PAHS recurrent cell.

All functions take tape handles (:class:`~pahs.tensorcore.tape.Var`) and a
:class:`~pahs.model.parameters.BoundParameters` view scoped to one direction
(``fwd`` or ``bwd``), so the same code serves training, inference and the
gradient checks.

Shapes, with q = 4:
    B_t      (N, 3, H, W)
    f_B, f_L (N, c, H/q, W/q)
    h        (N, c/3, H/q, W/q)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from pahs.errors import ConfigError, ShapeError
from pahs.model.config import ModelConfig
from pahs.model.parameters import (
    BoundParameters,
    conv_spec,
    embed_spec,
    unembed_spec,
    up_spec,
    widths,
)
from pahs.tensorcore import ops
from pahs.tensorcore.tape import Tape, Var

logger = logging.getLogger(__name__)


@dataclass
class RecurrentCarry:
    """State threaded between time steps: hidden state and previous latent feature"""

    h: Var
    f_L_prev: Var

    @classmethod
    def zeros(cls, tape: Tape, config: ModelConfig, n: int, height: int, width: int):
        hq, wq = height // 4, width // 4
        dtype = config.dtype
        return cls(
            h=tape.constant(np.zeros((n, config.hidden, hq, wq), dtype=dtype)),
            f_L_prev=tape.constant(np.zeros((n, config.c, hq, wq), dtype=dtype)),
        )


@dataclass
class AttentionBundle:
    """Intermediate SNLA products kept for inspection"""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    S_NL: np.ndarray
    S_Sel: np.ndarray
    Att: np.ndarray
    grid: Tuple[int, int]


def _conv(x: Var, p: BoundParameters, name: str, spec) -> Var:
    return ops.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], spec)


def _res(x: Var, p: BoundParameters, name: str) -> Var:
    return ops.res_block(
        x,
        p[f"{name}.c1.w"],
        p[f"{name}.c1.b"],
        p[f"{name}.c2.w"],
        p[f"{name}.c2.b"],
    )


def _res_chain(x: Var, p: BoundParameters, group: str, tag: str, count: int) -> Var:
    for i in range(count):
        x = _res(x, p, f"{group}/{tag}{i}")
    return x


def _check_aligned(a: Var, b: Var, name: str) -> None:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(name, "batch", a.shape[0], b.shape[0])
    if a.shape[2] != b.shape[2]:
        raise ShapeError(name, "height", a.shape[2], b.shape[2])
    if a.shape[3] != b.shape[3]:
        raise ShapeError(name, "width", a.shape[3], b.shape[3])


def extract_features(B_t: Var, p: BoundParameters, config: ModelConfig) -> Var:
    """Blurry frame (N,3,H,W) -> f_B (N,c,H/4,W/4)"""
    if B_t.shape[1] != 3:
        raise ShapeError("B_t", "channel", 3, B_t.shape[1])
    for axis, size in (("height", B_t.shape[2]), ("width", B_t.shape[3])):
        if size % 4:
            raise ShapeError("B_t", axis, "multiple of 4", size)
    c4, c2, c = widths(config)
    g = "extractor"
    x = _conv(B_t, p, f"{g}/stem", conv_spec(3, c4))
    x = _conv(x, p, f"{g}/down1", conv_spec(c4, c2, stride=2))
    x = _res_chain(x, p, g, "rb_a", config.extractor_blocks)
    x = _conv(x, p, f"{g}/down2", conv_spec(c2, c, stride=2))
    return _res_chain(x, p, g, "rb_b", config.extractor_blocks)


def pp_block(feature: Var, state: Var, p: BoundParameters, config: ModelConfig) -> Var:
    """Ping-Pong block: state + conv(ResBlock(conv(concat(feature, state))))"""
    _check_aligned(feature, state, "pp_block")
    c, h = config.c, config.hidden
    if feature.shape[1] != c:
        raise ShapeError("pp_block.feature", "channel", c, feature.shape[1])
    if state.shape[1] != h:
        raise ShapeError("pp_block.state", "channel", h, state.shape[1])
    g = "pp_block"
    x = ops.concat([feature, state], axis=1)
    x = _conv(x, p, f"{g}/conv_in", conv_spec(c + h, h))
    x = _res(x, p, f"{g}/rb0")
    x = _conv(x, p, f"{g}/conv_out", conv_spec(h, h))
    return ops.add(state, x)


def _pp_schedule(config: ModelConfig) -> Tuple[str, str]:
    """Which features feed the ping and pong steps"""
    if config.pp_inputs == "blur":
        return "B", "B"
    if config.pp_inputs == "latent":
        return "L", "L"
    if config.pp_order == "l_first":
        return "L", "B"
    return "B", "L"


def pprnn_update(
    carry: RecurrentCarry,
    f_B: Var,
    n: int,
    p: BoundParameters,
    config: ModelConfig,
) -> Var:
    """h^(0) = h; g^(i) = M_P(f_B, h^(i-1)); h^(i) = M_P(f_L_prev, g^(i)).

    Both steps read the single shared ``pp_block`` group.
    """
    if n < 0:
        raise ConfigError(f"recurrence count must be >= 0, got {n}")
    if config.pp_inputs == "none":
        return carry.h
    features = {"B": f_B, "L": carry.f_L_prev}
    ping, pong = _pp_schedule(config)
    h = carry.h
    for _ in range(n):
        g = pp_block(features[ping], h, p, config)
        h = pp_block(features[pong], g, p, config)
    return h


def _tokens(x: Var) -> Var:
    """(N, d, gh, gw) -> (N, gh*gw, d)"""
    n, d, gh, gw = x.shape
    return ops.transpose(ops.reshape(x, (n, d, gh * gw)), (0, 2, 1))


def snla(
    f_B: Var, h_n: Var, p: BoundParameters, config: ModelConfig
) -> Tuple[Var, Optional[AttentionBundle]]:
    """Selective non-local attention refining the hidden state.

    q = Q(f_B) (or Q(h_n) in self mode), k = K(h_n), v = V(h_n);
    S_NL = softmax(q k^T); S_Sel = sigmoid(FC(avgpool_keys(q k^T)));
    h_tilde = h_n + D(reshape((S_Sel * S_NL) v)).
    """
    _check_aligned(f_B, h_n, "snla")
    if config.attention == "none":
        return h_n, None
    s, h, e = config.attn_stride, config.hidden, config.embed
    hq, wq = h_n.shape[2], h_n.shape[3]
    for axis, size in (("height", hq), ("width", wq)):
        if size % s:
            raise ShapeError("snla.h_n", axis, f"multiple of {s}", size)
    gh, gw = hq // s, wq // s
    g = "snla"

    if config.attention_mode == "self":
        q_src, q_in = h_n, h
    else:
        q_src, q_in = f_B, config.c
    q = _tokens(_conv(q_src, p, f"{g}/Q", embed_spec(q_in, e, s)))
    k = _tokens(_conv(h_n, p, f"{g}/K", embed_spec(h, e, s)))
    v = _tokens(_conv(h_n, p, f"{g}/V", embed_spec(h, h, s)))

    scores = ops.matmul(q, ops.transpose(k, (0, 2, 1)))
    S_NL = ops.softmax_rows(scores)
    if config.attention == "nla":
        S_Sel = None
        weights = S_NL
    else:
        pooled = ops.avg_pool(scores, axis=-1)
        S_Sel = ops.sigmoid(
            ops.fully_connected(pooled, p[f"{g}/filter_fc.w"], p[f"{g}/filter_fc.b"])
        )
        weights = ops.mul(S_Sel, S_NL)

    out = ops.matmul(weights, v)
    n = out.shape[0]
    grid = ops.reshape(ops.transpose(out, (0, 2, 1)), (n, h, gh, gw))
    att = ops.conv2d_transpose(
        grid, p[f"{g}/D.w"], p[f"{g}/D.b"], unembed_spec(h, h, s)
    )
    h_tilde = ops.add(h_n, att)

    sel = (
        S_Sel.value[..., 0]
        if S_Sel is not None
        else np.ones(S_NL.shape[:2], dtype=S_NL.dtype)
    )
    bundle = AttentionBundle(
        q=q.value,
        k=k.value,
        v=v.value,
        S_NL=S_NL.value,
        S_Sel=sel,
        Att=att.value,
        grid=(gh, gw),
    )
    return h_tilde, bundle


def reconstruct_head(
    f_B: Var, h_tilde: Var, p: BoundParameters, config: ModelConfig
) -> Var:
    """concat(h_tilde, f_B) -> fusion conv -> ResBlocks -> f_L"""
    _check_aligned(f_B, h_tilde, "reconstruct")
    c, h = config.c, config.hidden
    x = ops.concat([h_tilde, f_B], axis=1)
    x = _conv(x, p, "recon_head/fuse", conv_spec(c + h, c))
    return _res_chain(x, p, "recon_head", "rb", config.head_blocks)


def reconstruct_tail(
    feature: Var, B_t: Var, p: BoundParameters, config: ModelConfig, group: str
) -> Var:
    """Upsample a latent feature back to a frame; adds B_t when global_skip is on.

    ``group`` is ``recon_tail`` (unidirectional) or ``fused_tail`` (takes 2c channels).
    """
    c4, c2, _ = widths(config)
    cin = feature.shape[1]
    x = ops.conv2d_transpose(
        feature, p[f"{group}/up1.w"], p[f"{group}/up1.b"], up_spec(cin, c2)
    )
    x = _res_chain(x, p, group, "rb_a", config.tail_blocks)
    x = ops.conv2d_transpose(
        x, p[f"{group}/up2.w"], p[f"{group}/up2.b"], up_spec(c2, c4)
    )
    x = _res_chain(x, p, group, "rb_b", config.tail_blocks)
    x = _conv(x, p, f"{group}/out", conv_spec(c4, 3))
    if x.shape != B_t.shape:
        raise ShapeError("L_t", "shape", B_t.shape, x.shape)
    if config.global_skip:
        x = ops.add(B_t, x)
    return x


def reconstruct(
    f_B: Var, h_tilde: Var, B_t: Var, p: BoundParameters, config: ModelConfig
) -> Tuple[Var, Var]:
    """Returns (L_t, f_L). Values are not clamped here; clamping happens at export."""
    f_L = reconstruct_head(f_B, h_tilde, p, config)
    L_t = reconstruct_tail(f_L, B_t, p, config, "recon_tail")
    return L_t, f_L


def extract_hidden(f_L: Var, p: BoundParameters, config: ModelConfig) -> Var:
    """f_L (N,c,·,·) -> h (N,c/3,·,·): conv -> ResBlock -> conv"""
    c, h = config.c, config.hidden
    if f_L.shape[1] != c:
        raise ShapeError("f_L", "channel", c, f_L.shape[1])
    g = "hidden_extractor"
    x = _conv(f_L, p, f"{g}/conv_in", conv_spec(c, h))
    x = _res(x, p, f"{g}/rb0")
    return _conv(x, p, f"{g}/conv_out", conv_spec(h, h))


@dataclass
class StepResult:
    """Everything one cell step produces, for callers that need intermediates"""

    L_t: Optional[Var]
    carry: RecurrentCarry
    bundle: Optional[AttentionBundle]
    f_B: Var
    h_n: Var
    h_tilde: Var


def latent_step(
    B_t: Var,
    carry: RecurrentCarry,
    p: BoundParameters,
    config: ModelConfig,
    decode: bool = True,
) -> StepResult:
    """One time step; with ``decode=False`` the tail is skipped and L_t is None"""
    f_B = extract_features(B_t, p, config)
    _check_aligned(f_B, carry.h, "carry.h")
    h_n = pprnn_update(carry, f_B, config.n_pp, p, config)
    h_tilde, bundle = snla(f_B, h_n, p, config)
    f_L = reconstruct_head(f_B, h_tilde, p, config)
    L_t = reconstruct_tail(f_L, B_t, p, config, "recon_tail") if decode else None
    h_t = extract_hidden(f_L, p, config)
    return StepResult(L_t, RecurrentCarry(h_t, f_L), bundle, f_B, h_n, h_tilde)


def cell_step(
    B_t: Var, carry: RecurrentCarry, p: BoundParameters, config: ModelConfig
) -> Tuple[Var, RecurrentCarry, Optional[AttentionBundle]]:
    """extract_features -> pprnn_update -> snla -> reconstruct -> extract_hidden"""
    result = latent_step(B_t, carry, p, config, decode=True)
    return result.L_t, result.carry, result.bundle
