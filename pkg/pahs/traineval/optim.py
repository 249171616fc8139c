"""
Adam with bias correction and a piecewise-halving learning-rate schedule.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from pahs.errors import ConfigError, ShapeError
from pahs.model.parameters import ParameterStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LRSchedule:
    """Learning rate halved every ``halve_every`` iterations and at each milestone"""

    initial: float = 1e-4
    halve_every: Optional[int] = None
    milestones: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.initial < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.initial}")
        if self.halve_every is not None and self.halve_every < 1:
            raise ConfigError(f"halve_every must be >= 1, got {self.halve_every}")

    def lr_at(self, iteration: int) -> float:
        halvings = sum(1 for m in self.milestones if iteration >= m)
        if self.halve_every:
            halvings += iteration // self.halve_every
        return self.initial * 0.5**halvings


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: LRSchedule = field(default_factory=LRSchedule)
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        """Learning rate the next step will use"""
        return self.schedule.lr_at(self.step)


def adam_step(
    params: ParameterStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    names: Optional[Sequence[str]] = None,
) -> ParameterStore:
    """Update ``params`` in place and advance ``state.step``.

    Moments are kept in float64. Parameters absent from ``grads`` are skipped.
    """
    lr = state.lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    step_size = lr / bc1

    for name in names if names is not None else params.names():
        if name not in grads:
            continue
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"grad {name}", "shape", p.shape, g.shape)
        if name not in state.m:
            state.m[name] = np.zeros(p.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.shape, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if step_size == 0.0:
            continue
        denom = np.sqrt(v * (1.0 / bc2)) + state.eps
        p -= (step_size * m / denom).astype(p.dtype)
    return params
