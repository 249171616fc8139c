"""
Architectural hyperparameters of the PAHS network.
"""

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional

import numpy as np

from pahs.errors import ConfigError, ShapeError

PP_ORDERS = ("b_first", "l_first")
PP_INPUTS = ("both", "blur", "latent", "none")
ATTENTIONS = ("snla", "nla", "none")
ATTENTION_MODES = ("cross", "self")
PRECISIONS = ("float32", "float64")


@dataclass(frozen=True)
class ModelConfig:
    c: int = 192
    n_pp: int = 4
    attn_stride: int = 4
    attn_dim: Optional[int] = None
    future_window: Optional[int] = 19
    bidirectional: bool = True
    global_skip: bool = True
    seed: int = 0
    pp_order: str = "b_first"
    pp_inputs: str = "both"
    attention: str = "snla"
    attention_mode: str = "cross"
    extractor_blocks: int = 5
    head_blocks: int = 3
    tail_blocks: int = 2
    precision: str = "float32"

    @property
    def hidden(self) -> int:
        """Hidden-state channel count, c/3"""
        return self.c // 3

    @property
    def embed(self) -> int:
        return self.attn_dim if self.attn_dim is not None else self.hidden

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)

    @property
    def spatial_multiple(self) -> int:
        """Input H and W must be multiples of this"""
        return 4 * self.attn_stride

    def validate(self) -> "ModelConfig":
        if self.c <= 0 or self.c % 3 != 0:
            raise ConfigError(f"c must be a positive multiple of 3, got {self.c}")
        if self.c < 4:
            raise ConfigError(f"c must be at least 4, got {self.c}")
        if self.n_pp < 0:
            raise ConfigError(f"n_pp must be >= 0, got {self.n_pp}")
        if self.attn_stride < 1:
            raise ConfigError(f"attn_stride must be >= 1, got {self.attn_stride}")
        if self.attn_dim is not None and self.attn_dim < 1:
            raise ConfigError(f"attn_dim must be >= 1, got {self.attn_dim}")
        if self.future_window is not None and self.future_window < 0:
            raise ConfigError(f"future_window must be >= 0, got {self.future_window}")
        for name, allowed in (
            ("pp_order", PP_ORDERS),
            ("pp_inputs", PP_INPUTS),
            ("attention", ATTENTIONS),
            ("attention_mode", ATTENTION_MODES),
            ("precision", PRECISIONS),
        ):
            value = getattr(self, name)
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        for name in ("extractor_blocks", "head_blocks", "tail_blocks"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        return self

    def check_frame(self, height: int, width: int, name: str = "frame") -> None:
        m = self.spatial_multiple
        if height % m:
            raise ShapeError(name, "height", f"multiple of {m}", height)
        if width % m:
            raise ShapeError(name, "width", f"multiple of {m}", width)

    def with_overrides(self, **overrides) -> "ModelConfig":
        return replace(self, **overrides).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values).validate()


PRESETS: Dict[str, ModelConfig] = {
    "full": ModelConfig(c=192, n_pp=4, future_window=19),
    # c=92 in the small variant is not divisible by 3; 93 keeps the c/3 hidden state
    "small": ModelConfig(c=93, n_pp=4, future_window=19),
    "desk": ModelConfig(c=24, n_pp=2, future_window=3),
    "tiny": ModelConfig(
        c=12,
        n_pp=1,
        attn_stride=2,
        future_window=1,
        extractor_blocks=1,
        head_blocks=1,
        tail_blocks=1,
        precision="float64",
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    """Look up a named preset, optionally overriding fields"""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].with_overrides(**overrides)
