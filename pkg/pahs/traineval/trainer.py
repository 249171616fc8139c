"""
Desk-scale training loop: aligned random patches, sequence L1, Adam.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from pahs.errors import ConfigError, ContractError, FrameIOError
from pahs.model.config import ModelConfig
from pahs.model.parameters import ParameterStore, check_compatible, init_parameters
from pahs.sequence.engine import FrameSequence, run_sequence
from pahs.tensorcore import ops
from pahs.tensorcore.tape import Tape
from pahs.traineval.losses import l1_loss_var
from pahs.traineval.optim import AdamState, LRSchedule, adam_step

logger = logging.getLogger(__name__)

PATCH_ALIGN = 16
LOSS_LOG_COLUMNS = ["iter", "loss", "lr"]

Pair = Tuple[FrameSequence, FrameSequence]


@dataclass(frozen=True)
class TrainConfig:
    """Run-level knobs; ``iterations`` overrides ``epochs * len(data)``"""

    epochs: int = 1
    iterations: Optional[int] = None
    patch: int = 64
    batch_size: int = 1
    clip_length: Optional[int] = None
    lr: float = 1e-4
    halve_every: Optional[int] = None
    milestones: Tuple[int, ...] = ()
    seed: int = 0
    log_every: int = 10
    progress: bool = False

    def validate(self, config: ModelConfig) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.iterations is not None and self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_length is not None and self.clip_length < 1:
            raise ConfigError(f"clip_length must be >= 1, got {self.clip_length}")
        align = max(PATCH_ALIGN, config.spatial_multiple)
        if self.patch < align or self.patch % config.spatial_multiple:
            raise ConfigError(
                f"patch must be a multiple of {config.spatial_multiple}, "
                f"got {self.patch}"
            )
        return self

    def schedule(self) -> LRSchedule:
        return LRSchedule(self.lr, self.halve_every, tuple(self.milestones))


@dataclass
class TrainResult:
    params: ParameterStore
    config: ModelConfig
    losses: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    state: Optional[AdamState] = None

    @property
    def log(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"iter": range(len(self.losses)), "loss": self.losses, "lr": self.lrs},
            columns=LOSS_LOG_COLUMNS,
        )


def sample_batch(
    rng: np.random.Generator,
    data: Sequence[Pair],
    patch: int,
    batch_size: int = 1,
    clip_length: Optional[int] = None,
) -> Pair:
    """A clip of aligned patches from one sequence, stacked along the batch axis"""
    blur, sharp = data[int(rng.integers(len(data)))]
    _, _, height, width = blur.dims
    if patch > height or patch > width:
        raise ContractError(f"patch {patch} exceeds frame size {height}x{width}")
    length = len(blur) if clip_length is None else min(clip_length, len(blur))
    start = int(rng.integers(0, len(blur) - length + 1))
    origins = [
        (
            PATCH_ALIGN * int(rng.integers(0, (height - patch) // PATCH_ALIGN + 1)),
            PATCH_ALIGN * int(rng.integers(0, (width - patch) // PATCH_ALIGN + 1)),
        )
        for _ in range(batch_size)
    ]

    def crop(seq: FrameSequence) -> FrameSequence:
        frames = [
            np.concatenate(
                [seq.frames[t][:, :, y : y + patch, x : x + patch] for y, x in origins],
                axis=0,
            )
            for t in range(start, start + length)
        ]
        return FrameSequence(frames, seq.ids[start : start + length])

    return crop(blur), crop(sharp)


def sequence_loss(latents, targets: FrameSequence):
    """Mean over frames of the per-frame L1 loss"""
    total = None
    for L, S in zip(latents, targets.frames):
        term = l1_loss_var(L, S)
        total = term if total is None else ops.add(total, term)
    return ops.scale(total, 1.0 / len(latents))


def train_step(
    params: ParameterStore,
    config: ModelConfig,
    blur: FrameSequence,
    sharp: FrameSequence,
    state: AdamState,
) -> float:
    """One forward/backward pass over a clip and one Adam update; returns the loss"""
    tape = Tape(record=True)
    bound = params.bind(tape)
    latents = run_sequence(blur, bound, config, tape)
    loss = sequence_loss(latents, sharp)
    grads = tape.backward(loss)
    adam_step(params, grads, state)
    return float(loss.value)


def train(
    config: ModelConfig,
    data: Sequence[Pair],
    epochs: int = 1,
    train_config: Optional[TrainConfig] = None,
    params: Optional[ParameterStore] = None,
) -> TrainResult:
    """Train ``config`` on paired (blur, sharp) sequences.

    Args:
        config: Model hyperparameters.
        data: Paired sequences; must not be empty.
        epochs: Passes over ``data``, one iteration per sequence per epoch.
            Ignored when ``train_config`` is given.
        train_config: Patch, batch, schedule and seed settings.
        params: Starting parameters; freshly initialized from ``config.seed`` if None.

    Returns:
        TrainResult holding the updated parameters and the per-iteration loss log.
    """
    config.validate()
    if not data:
        raise ContractError("empty dataset")
    tc = (train_config or TrainConfig(epochs=epochs)).validate(config)

    if params is None:
        params = init_parameters(config)
    else:
        check_compatible(params, config)
    iterations = tc.iterations if tc.iterations is not None else tc.epochs * len(data)
    rng = np.random.default_rng(tc.seed)
    state = AdamState(schedule=tc.schedule())
    result = TrainResult(params=params, config=config, state=state)

    logger.info(
        f"Training c={config.c} n={config.n_pp} for {iterations} iterations "
        f"(patch {tc.patch}, batch {tc.batch_size}, lr {tc.lr:g})"
    )
    for it in tqdm(range(iterations), desc="train", disable=not tc.progress):
        blur, sharp = sample_batch(rng, data, tc.patch, tc.batch_size, tc.clip_length)
        lr = state.lr
        loss = train_step(params, config, blur, sharp, state)
        result.losses.append(loss)
        result.lrs.append(lr)
        if not np.isfinite(loss):
            raise ContractError(f"loss became non-finite at iteration {it}")
        if tc.log_every and (it % tc.log_every == 0 or it == iterations - 1):
            logger.info(f"iter {it}: loss={loss:.6f} lr={lr:g}")
    return result


def write_loss_log(path: Union[str, Path], result: TrainResult) -> Path:
    """CSV with columns iter,loss,lr"""
    path = Path(path)
    try:
        result.log.to_csv(path, index=False)
    except OSError as e:
        logger.error(f"Error writing loss log {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
    return path
