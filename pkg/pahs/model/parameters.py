"""
Named, ordered parameter storage for the PAHS network.

Tensor names look like ``fwd.pp_block/conv_in.w``: the part before ``/`` is the
weight group, the rest names the tensor inside it. Each direction owns exactly
one ``pp_block`` group, read by both ping and pong steps.
"""

import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from pahs.errors import ConfigError, ContractError, FrameIOError, ShapeError
from pahs.model.config import ModelConfig
from pahs.tensorcore.kernels import ConvSpec
from pahs.tensorcore.tape import Tape, Var
from pahs.tensorcore.tensor4 import pt4_dumps, pt4_read_stream

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "PAHS-CHECKPOINT 1"
DIRECTIONS = ("fwd", "bwd")


def group_of(name: str) -> str:
    return name.split("/", 1)[0]


class ParameterStore:
    """Ordered mapping from tensor name to numpy array"""

    def __init__(self, tensors: Optional[Mapping[str, np.ndarray]] = None):
        self._tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if "/" not in name:
            raise ContractError(f"parameter name {name!r} has no group prefix")
        if name in self._tensors:
            raise ContractError(f"duplicate parameter {name!r}")
        self._tensors[name] = np.ascontiguousarray(value)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"parameter {name!r} not found") from None

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._tensors:
            raise KeyError(f"parameter {name!r} not found")
        if value.shape != self._tensors[name].shape:
            raise ShapeError(name, "shape", self._tensors[name].shape, value.shape)
        self._tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> List[str]:
        return list(self._tensors)

    def groups(self) -> List[str]:
        seen: "OrderedDict[str, None]" = OrderedDict()
        for name in self._tensors:
            seen[group_of(name)] = None
        return list(seen)

    def group(self, group: str) -> Dict[str, np.ndarray]:
        return {n: v for n, v in self._tensors.items() if group_of(n) == group}

    def has_group(self, group: str) -> bool:
        return any(group_of(n) == group for n in self._tensors)

    def num_parameters(self, group: Optional[str] = None) -> int:
        return int(
            sum(
                v.size
                for n, v in self._tensors.items()
                if group is None or group_of(n) == group
            )
        )

    def copy(self) -> "ParameterStore":
        return ParameterStore({n: v.copy() for n, v in self._tensors.items()})

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({n: v.astype(dtype) for n, v in self._tensors.items()})

    def bind(self, tape: Tape) -> "BoundParameters":
        """Register every tensor as a named leaf on ``tape``"""
        return BoundParameters(
            {n: tape.leaf(v, name=n) for n, v in self._tensors.items()}
        )


class BoundParameters:
    """Parameters as tape leaves, optionally viewed under a name prefix"""

    def __init__(self, vars: Mapping[str, Var], prefix: str = ""):
        self._vars = vars
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Var:
        full = self._full(name)
        try:
            return self._vars[full]
        except KeyError:
            raise ContractError(f"missing parameter {full!r}") from None

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self._vars

    def scope(self, prefix: str) -> "BoundParameters":
        return BoundParameters(self._vars, self._full(prefix))

    def has_group(self, group: str) -> bool:
        full = self._full(group)
        return any(group_of(n) == full for n in self._vars)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------


def widths(config: ModelConfig) -> Tuple[int, int, int]:
    """Encoder channel widths at full, half and quarter resolution"""
    c = config.c
    return max(1, c // 4), max(1, c // 2), c


def conv_spec(cin: int, cout: int, stride: int = 1) -> ConvSpec:
    return ConvSpec(cin, cout, kernel_size=3, stride=stride, padding=1)


def up_spec(cin: int, cout: int) -> ConvSpec:
    return ConvSpec(
        cin, cout, kernel_size=3, stride=2, padding=1, transposed=True, output_padding=1
    )


def embed_spec(cin: int, cout: int, stride: int) -> ConvSpec:
    return ConvSpec(cin, cout, kernel_size=stride, stride=stride, padding=0)


def unembed_spec(cin: int, cout: int, stride: int) -> ConvSpec:
    return ConvSpec(
        cin, cout, kernel_size=stride, stride=stride, padding=0, transposed=True
    )


def layout(config: ModelConfig) -> List[Tuple[str, ConvSpec]]:
    """Every conv-like tensor pair in creation order, keyed by ``group/name``.

    ResBlocks appear as two 3x3 convs ``<rb>.c1`` and ``<rb>.c2``. The filter
    FC of SNLA is listed separately by :func:`init_parameters`.
    """
    c4, c2, c = widths(config)
    h, e, s = config.hidden, config.embed, config.attn_stride
    entries: List[Tuple[str, ConvSpec]] = []

    def res_blocks(group: str, tag: str, width: int, count: int):
        for i in range(count):
            entries.append((f"{group}/{tag}{i}.c1", conv_spec(width, width)))
            entries.append((f"{group}/{tag}{i}.c2", conv_spec(width, width)))

    def tail(group: str, cin: int):
        entries.append((f"{group}/up1", up_spec(cin, c2)))
        res_blocks(group, "rb_a", c2, config.tail_blocks)
        entries.append((f"{group}/up2", up_spec(c2, c4)))
        res_blocks(group, "rb_b", c4, config.tail_blocks)
        entries.append((f"{group}/out", conv_spec(c4, 3)))

    directions = DIRECTIONS if config.bidirectional else DIRECTIONS[:1]
    for d in directions:
        g = f"{d}.extractor"
        entries.append((f"{g}/stem", conv_spec(3, c4)))
        entries.append((f"{g}/down1", conv_spec(c4, c2, stride=2)))
        res_blocks(g, "rb_a", c2, config.extractor_blocks)
        entries.append((f"{g}/down2", conv_spec(c2, c, stride=2)))
        res_blocks(g, "rb_b", c, config.extractor_blocks)

        g = f"{d}.pp_block"
        entries.append((f"{g}/conv_in", conv_spec(c + h, h)))
        res_blocks(g, "rb", h, 1)
        entries.append((f"{g}/conv_out", conv_spec(h, h)))

        g = f"{d}.snla"
        q_in = h if config.attention_mode == "self" else c
        entries.append((f"{g}/Q", embed_spec(q_in, e, s)))
        entries.append((f"{g}/K", embed_spec(h, e, s)))
        entries.append((f"{g}/V", embed_spec(h, h, s)))
        entries.append((f"{g}/D", unembed_spec(h, h, s)))

        g = f"{d}.recon_head"
        entries.append((f"{g}/fuse", conv_spec(c + h, c)))
        res_blocks(g, "rb", c, config.head_blocks)

        g = f"{d}.hidden_extractor"
        entries.append((f"{g}/conv_in", conv_spec(c, h)))
        res_blocks(g, "rb", h, 1)
        entries.append((f"{g}/conv_out", conv_spec(h, h)))

    tail("fwd.recon_tail", c)
    if config.bidirectional:
        tail("fused_tail", 2 * c)
    return entries


def init_parameters(config: ModelConfig) -> ParameterStore:
    """Seeded uniform(+-sqrt(1/fan_in)) weights, zero biases"""
    config.validate()
    rng = np.random.default_rng(config.seed)
    dtype = config.dtype
    store = ParameterStore()
    for name, spec in layout(config):
        bound = np.sqrt(1.0 / spec.fan_in)
        weight = rng.uniform(-bound, bound, spec.weight_shape)
        store.add(f"{name}.w", weight.astype(dtype))
        store.add(f"{name}.b", np.zeros(spec.out_channels, dtype=dtype))
        if name.endswith(".snla/K"):
            snla = name.rsplit("/", 1)[0]
            fc = rng.uniform(-1.0, 1.0, (1, 1))
            store.add(f"{snla}/filter_fc.w", fc.astype(dtype))
            store.add(f"{snla}/filter_fc.b", np.zeros(1, dtype=dtype))
    logger.info(
        f"Initialized {store.num_parameters()} parameters "
        f"in {len(store.groups())} groups"
    )
    return store


def check_compatible(store: ParameterStore, config: ModelConfig) -> None:
    """Raise ShapeError naming the first tensor that does not fit ``config``"""
    expected = init_shapes(config)
    for name, shape in expected.items():
        if name not in store:
            raise ShapeError(name, "presence", shape, "missing")
        if store[name].shape != shape:
            raise ShapeError(name, "shape", shape, store[name].shape)


def init_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    for name, spec in layout(config):
        shapes[f"{name}.w"] = spec.weight_shape
        shapes[f"{name}.b"] = (spec.out_channels,)
        if name.endswith(".snla/K"):
            snla = name.rsplit("/", 1)[0]
            shapes[f"{snla}/filter_fc.w"] = (1, 1)
            shapes[f"{snla}/filter_fc.b"] = (1,)
    return shapes


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _as_rank4(value: np.ndarray) -> np.ndarray:
    return value.reshape((1,) * (4 - value.ndim) + value.shape)


def save_checkpoint(
    path: Union[str, Path], store: ParameterStore, config: ModelConfig
) -> Path:
    """Write manifest text followed by one PT4 blob per tensor, in store order"""
    path = Path(path)
    lines = [CHECKPOINT_MAGIC, "config " + json.dumps(config.to_dict(), sort_keys=True)]
    for group in store.groups():
        lines.append(f"group {group}")
        for name, value in store.group(group).items():
            dims = " ".join(str(d) for d in value.shape)
            lines.append(f"tensor {name} {value.ndim} {dims}".rstrip())
    lines.append("end")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    try:
        with path.open("wb") as f:
            f.write(manifest)
            for group in store.groups():
                for value in store.group(group).values():
                    f.write(pt4_dumps(_as_rank4(value)))
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
    logger.info(f"Saved checkpoint {path} ({store.num_parameters()} parameters)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ParameterStore, ModelConfig]:
    """Inverse of :func:`save_checkpoint`; bit-exact"""
    path = Path(path)
    try:
        f = path.open("rb")
    except OSError as e:
        logger.error(f"Error opening checkpoint {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
    with f:
        if f.readline().decode("utf-8").strip() != CHECKPOINT_MAGIC:
            raise FrameIOError(path, "not a PAHS checkpoint")
        config_line = f.readline().decode("utf-8").strip()
        if not config_line.startswith("config "):
            raise FrameIOError(path, "checkpoint manifest lacks a config line")
        try:
            config = ModelConfig.from_dict(json.loads(config_line[len("config ") :]))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{path}: bad checkpoint config: {e}") from e
        entries: List[Tuple[str, Tuple[int, ...]]] = []
        while True:
            raw = f.readline()
            if not raw:
                raise FrameIOError(path, "manifest has no end marker")
            line = raw.decode("utf-8").strip()
            if line == "end":
                break
            if line.startswith("group "):
                continue
            parts = line.split()
            if len(parts) < 3 or parts[0] != "tensor":
                raise FrameIOError(path, f"bad manifest line {line!r}")
            ndim = int(parts[2])
            entries.append((parts[1], tuple(int(d) for d in parts[3 : 3 + ndim])))
        store = ParameterStore()
        for name, shape in entries:
            blob = pt4_read_stream(f, source=f"{path}:{name}")
            store.add(name, blob.reshape(shape))
    logger.info(f"Loaded checkpoint {path} ({len(store)} tensors)")
    return store, config
