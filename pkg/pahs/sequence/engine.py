"""
Drives the PAHS cell over frame sequences.

Unidirectional mode threads one carry forward. Bidirectional mode runs the
forward cell causally and, for every frame t, a backward cell over frames
min(t+W, T-1) down to t starting from a zero carry, then fuses both latent
features with the doubled-input reconstructor tail. ``future_window=None``
replaces the per-frame windows by one full reverse sweep.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from pahs.errors import ConfigError, ContractError, FrameIOError, ShapeError
from pahs.model.config import ModelConfig
from pahs.model.network import (
    AttentionBundle,
    RecurrentCarry,
    latent_step,
    reconstruct_tail,
)
from pahs.model.parameters import BoundParameters, ParameterStore
from pahs.tensorcore import ops
from pahs.tensorcore.tape import Tape, Var
from pahs.tensorcore.tensor4 import save_pt4

logger = logging.getLogger(__name__)

STRONG_ATTENTION_THRESHOLD = 0.6


def worker_count() -> int:
    """Thread cap from PAHS_THREADS, defaulting to the CPU count"""
    raw = os.environ.get("PAHS_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"PAHS_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


@dataclass
class FrameSequence:
    """Ordered frames of uniform dims with per-frame labels"""

    frames: List[np.ndarray]
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise ContractError("frame sequence is empty")
        if not self.ids:
            self.ids = [f"{i:06d}" for i in range(len(self.frames))]
        if len(self.ids) != len(self.frames):
            raise ContractError("ids and frames differ in length")
        dims = self.frames[0].shape
        for i, frame in enumerate(self.frames):
            if frame.ndim != 4:
                raise ShapeError(f"frame {self.ids[i]}", "rank", 4, frame.ndim)
            if frame.shape != dims:
                raise ShapeError(f"frame {self.ids[i]}", "shape", dims, frame.shape)
            if frame.shape[1] != 3:
                raise ShapeError(f"frame {self.ids[i]}", "channel", 3, frame.shape[1])

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dims(self):
        return self.frames[0].shape

    def astype(self, dtype) -> "FrameSequence":
        return FrameSequence([f.astype(dtype) for f in self.frames], list(self.ids))


@dataclass
class BidirState:
    """Carries of both directions plus cached per-frame latent features"""

    forward: Optional[RecurrentCarry] = None
    backward: Optional[RecurrentCarry] = None
    f_forward: List[Var] = field(default_factory=list)
    f_backward: List[Var] = field(default_factory=list)


def _zero_carry(tape: Tape, config: ModelConfig, dims) -> RecurrentCarry:
    n, _, height, width = dims
    return RecurrentCarry.zeros(tape, config, n, height, width)


def _prepare(seq: FrameSequence, config: ModelConfig):
    config.validate()
    _, _, height, width = seq.dims
    config.check_frame(height, width)


def _frame(tape: Tape, seq: FrameSequence, t: int, config: ModelConfig) -> Var:
    return tape.constant(seq.frames[t].astype(config.dtype, copy=False))


def run_unidirectional(
    seq: FrameSequence,
    params: Union[ParameterStore, BoundParameters],
    config: ModelConfig,
    tape: Optional[Tape] = None,
) -> List[Var]:
    """Restored frame per input frame, threading the carry from zeros"""
    _prepare(seq, config)
    if tape is None:
        tape = Tape(record=False)
    p = _bind(params, tape).scope("fwd")
    carry = _zero_carry(tape, config, seq.dims)
    latents = []
    for t in range(len(seq)):
        result = latent_step(_frame(tape, seq, t, config), carry, p, config)
        carry = result.carry
        latents.append(result.L_t)
        logger.debug(f"unidirectional frame {seq.ids[t]} done")
    return latents


def _bind(params, tape: Tape) -> BoundParameters:
    if isinstance(params, ParameterStore):
        return params.bind(tape)
    return params


def _encode(tape, seq, t, carry, p, config) -> RecurrentCarry:
    """One cell step without the reconstructor tail"""
    B_t = _frame(tape, seq, t, config)
    return latent_step(B_t, carry, p, config, decode=False).carry


def _forward_latents(seq, p: BoundParameters, config, tape):
    carry = _zero_carry(tape, config, seq.dims)
    feats = []
    for t in range(len(seq)):
        carry = _encode(tape, seq, t, carry, p, config)
        feats.append(carry.f_L_prev)
    return feats, carry


def _backward_window(seq, p: BoundParameters, config, tape, t: int) -> Var:
    """f^b_t from a zero carry started at min(t+W, T-1)"""
    last = min(t + config.future_window, len(seq) - 1)
    carry = _zero_carry(tape, config, seq.dims)
    for u in range(last, t - 1, -1):
        carry = _encode(tape, seq, u, carry, p, config)
    return carry.f_L_prev


def _backward_sweep(seq, p: BoundParameters, config, tape):
    carry = _zero_carry(tape, config, seq.dims)
    feats: List[Optional[Var]] = [None] * len(seq)
    for u in range(len(seq) - 1, -1, -1):
        carry = _encode(tape, seq, u, carry, p, config)
        feats[u] = carry.f_L_prev
    return feats, carry


def run_bidirectional(
    seq: FrameSequence,
    params: Union[ParameterStore, BoundParameters],
    config: ModelConfig,
    tape: Optional[Tape] = None,
    state: Optional[BidirState] = None,
) -> List[Var]:
    """Forward latents fused with windowed backward latents through the fused tail.

    Windows are independent; when the tape is not recording they fan out over
    up to PAHS_THREADS threads. Results do not depend on scheduling.
    """
    _prepare(seq, config)
    if tape is None:
        tape = Tape(record=False)
    bound = _bind(params, tape)
    if not bound.has_group("bwd.pp_block") or not bound.has_group("fused_tail"):
        raise ConfigError("bidirectional inference needs the backward parameter set")
    fwd, bwd = bound.scope("fwd"), bound.scope("bwd")

    workers = 1 if tape.record else min(worker_count(), len(seq) + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fwd_job = pool.submit(_forward_latents, seq, fwd, config, tape)
            if config.future_window is None:
                f_b, b_carry = pool.submit(
                    _backward_sweep, seq, bwd, config, tape
                ).result()
            else:
                b_carry = None
                f_b = list(
                    pool.map(
                        lambda t: _backward_window(seq, bwd, config, tape, t),
                        range(len(seq)),
                    )
                )
            f_f, f_carry = fwd_job.result()
    else:
        f_f, f_carry = _forward_latents(seq, fwd, config, tape)
        b_carry = None
        if config.future_window is None:
            f_b, b_carry = _backward_sweep(seq, bwd, config, tape)
        else:
            f_b = [_backward_window(seq, bwd, config, tape, t) for t in range(len(seq))]

    if state is not None:
        state.forward, state.backward = f_carry, b_carry
        state.f_forward, state.f_backward = f_f, f_b

    latents = []
    for t in range(len(seq)):
        fused = ops.concat([f_f[t], f_b[t]], axis=1)
        latents.append(
            reconstruct_tail(
                fused, _frame(tape, seq, t, config), bound, config, "fused_tail"
            )
        )
    logger.debug(f"bidirectional pass over {len(seq)} frames with {workers} workers")
    return latents


def run_sequence(
    seq: FrameSequence,
    params: Union[ParameterStore, BoundParameters],
    config: ModelConfig,
    tape: Optional[Tape] = None,
) -> List[Var]:
    if config.bidirectional:
        return run_bidirectional(seq, params, config, tape)
    return run_unidirectional(seq, params, config, tape)


def restore(
    seq: FrameSequence, params: ParameterStore, config: ModelConfig
) -> List[np.ndarray]:
    """Inference helper returning plain arrays clamped to [0, 1] for export"""
    latents = run_sequence(seq, params, config, Tape(record=False))
    return [np.clip(v.value, 0.0, 1.0) for v in latents]


def debug_dump(
    seq: FrameSequence,
    params: ParameterStore,
    config: ModelConfig,
    frame_index: int,
    out_dir: Union[str, Path],
) -> Dict[str, object]:
    """Write the forward cell's intermediates for one frame as PT4 files.

    Files: f_B, h, h_n, h_tilde, q, k, v, S_NL, S_Sel, Att and strong_mask
    (normalized S_Sel * S_NL above 0.6). Matrices are stored as (N, 1, rows, cols).
    """
    _prepare(seq, config)
    if not 0 <= frame_index < len(seq):
        raise ContractError(f"frame_index {frame_index} out of range [0, {len(seq)})")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Error creating {out_dir}: {str(e)}")
        raise FrameIOError(out_dir, str(e)) from e

    tape = Tape(record=False)
    p = params.bind(tape).scope("fwd")
    carry = _zero_carry(tape, config, seq.dims)
    for t in range(frame_index + 1):
        h_in = carry.h
        result = latent_step(_frame(tape, seq, t, config), carry, p, config)
        carry = result.carry

    tensors: Dict[str, np.ndarray] = {
        "f_B": result.f_B.value,
        "h": h_in.value,
        "h_n": result.h_n.value,
        "h_tilde": result.h_tilde.value,
    }
    bundle: Optional[AttentionBundle] = result.bundle
    if bundle is not None:
        weighted = bundle.S_Sel[..., None] * bundle.S_NL
        peak = weighted.max(axis=-1, keepdims=True)
        normalized = weighted / np.where(peak > 0, peak, 1)
        strong = (normalized > STRONG_ATTENTION_THRESHOLD).astype(bundle.S_NL.dtype)
        tensors.update(
            q=bundle.q[:, None],
            k=bundle.k[:, None],
            v=bundle.v[:, None],
            S_NL=bundle.S_NL[:, None],
            S_Sel=bundle.S_Sel[:, None, :, None],
            Att=bundle.Att,
            strong_mask=strong[:, None],
        )
    paths = {}
    for name, value in tensors.items():
        paths[name] = save_pt4(out_dir / f"{name}.pt4", np.ascontiguousarray(value))
    logger.info(
        f"Dumped {len(paths)} tensors for frame {seq.ids[frame_index]} to {out_dir}"
    )
    return {"bundle": bundle, "paths": paths}


__all__: Sequence[str] = (
    "BidirState",
    "FrameSequence",
    "debug_dump",
    "restore",
    "run_bidirectional",
    "run_sequence",
    "run_unidirectional",
    "worker_count",
)
