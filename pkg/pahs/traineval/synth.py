"""
Synthetic paired blur/sharp sequences.

A scene is a smooth background plus textured discs and boxes moving at
constant per-frame velocity (wrapping at the canvas border). Each output frame
integrates ``substeps`` renders spread over one frame interval: the blurry
frame is their arithmetic mean and the sharp frame is the centre render.
Renders are 8-bit, so blur = sum / (substeps * 255) exactly.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Tuple, Union

import cv2
import numpy as np
from tqdm import tqdm

from pahs.errors import ConfigError
from pahs.sequence.engine import FrameSequence, worker_count
from pahs.sequence.frames_io import BLUR_DIR, SHARP_DIR, save_sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    height: int = 64
    width: int = 64
    num_shapes: int = 4
    max_displacement: float = 3.0
    substeps: int = 7
    length: int = 8
    seed: int = 0
    num_sequences: int = 1

    def validate(self) -> "SynthSpec":
        if self.height < 16 or self.width < 16:
            raise ConfigError(
                f"canvas {self.height}x{self.width} is smaller than 16x16"
            )
        if self.height % 16 or self.width % 16:
            raise ConfigError(
                f"canvas {self.height}x{self.width} must be a multiple of 16"
            )
        if self.substeps < 1:
            raise ConfigError(f"substeps must be >= 1, got {self.substeps}")
        if self.length < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")
        if self.num_shapes < 0:
            raise ConfigError(f"num_shapes must be >= 0, got {self.num_shapes}")
        if self.max_displacement < 0:
            raise ConfigError("max_displacement must be >= 0")
        if self.num_sequences < 1:
            raise ConfigError(f"num_sequences must be >= 1, got {self.num_sequences}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class _Layer:
    texture: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) bool
    velocity: Tuple[float, float]


def _background(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    coarse_shape = (max(2, spec.height // 8), max(2, spec.width // 8), 3)
    coarse = rng.integers(0, 256, coarse_shape)
    return cv2.resize(
        coarse.astype(np.uint8),
        (spec.width, spec.height),
        interpolation=cv2.INTER_LINEAR,
    )


def _shape_layer(rng: np.random.Generator, spec: SynthSpec) -> _Layer:
    h, w = spec.height, spec.width
    mask = np.zeros((h, w), dtype=np.uint8)
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    size = int(rng.integers(max(2, min(h, w) // 10), max(3, min(h, w) // 4)))
    if rng.random() < 0.5:
        cv2.circle(mask, (cx, cy), size, 255, thickness=-1)
    else:
        corners = (cx - size, cy - size), (cx + size, cy + size)
        cv2.rectangle(mask, *corners, 255, thickness=-1)

    base = rng.integers(40, 216, 3)
    period = int(rng.integers(2, 6))
    yy, xx = np.mgrid[0:h, 0:w]
    checker = (((yy // period) + (xx // period)) % 2).astype(np.int64)
    texture = np.clip(base[None, None, :] + (checker[..., None] * 2 - 1) * 40, 0, 255)

    d = spec.max_displacement
    velocity = (float(rng.uniform(-d, d)), float(rng.uniform(-d, d)))
    return _Layer(texture.astype(np.uint8), mask > 0, velocity)


def _scene(spec: SynthSpec, sequence_index: int):
    rng = np.random.default_rng([spec.seed, sequence_index])
    background = _background(rng, spec)
    layers = [_shape_layer(rng, spec) for _ in range(spec.num_shapes)]
    return background, layers


def _render(background: np.ndarray, layers: List[_Layer], t: float) -> np.ndarray:
    canvas = background.copy()
    for layer in layers:
        dy = int(np.rint(layer.velocity[0] * t))
        dx = int(np.rint(layer.velocity[1] * t))
        mask = np.roll(layer.mask, (dy, dx), axis=(0, 1))
        texture = np.roll(layer.texture, (dy, dx), axis=(0, 1))
        canvas[mask] = texture[mask]
    return canvas


def substep_times(spec: SynthSpec, frame_index: int) -> List[float]:
    """Exposure instants of one frame, centred on ``frame_index``"""
    s = spec.substeps
    return [frame_index + (k - (s - 1) / 2.0) / s for k in range(s)]


def render_substeps(
    spec: SynthSpec, frame_index: int, sequence_index: int = 0
) -> List[np.ndarray]:
    """The 8-bit (H, W, 3) renders integrated into one frame"""
    spec.validate()
    background, layers = _scene(spec, sequence_index)
    return [_render(background, layers, t) for t in substep_times(spec, frame_index)]


def _to_tensor(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None])


def blur_from_substeps(renders: List[np.ndarray]) -> np.ndarray:
    """(1, 3, H, W) float32 mean of 8-bit renders, scaled to [0, 1]"""
    total = np.sum([r.astype(np.int64) for r in renders], axis=0)
    return (_to_tensor(total) / (len(renders) * 255.0)).astype(np.float32)


def sharp_from_substeps(renders: List[np.ndarray]) -> np.ndarray:
    centre = renders[(len(renders) - 1) // 2]
    return (_to_tensor(centre).astype(np.int64) / 255.0).astype(np.float32)


def generate_synthetic(
    spec: SynthSpec, sequence_index: int = 0
) -> Tuple[FrameSequence, FrameSequence]:
    """(blur, sharp) sequences; deterministic in (spec, sequence_index)"""
    spec.validate()
    background, layers = _scene(spec, sequence_index)
    blur, sharp = [], []
    for i in range(spec.length):
        renders = [_render(background, layers, t) for t in substep_times(spec, i)]
        blur.append(blur_from_substeps(renders))
        sharp.append(sharp_from_substeps(renders))
    ids = [f"{i:06d}" for i in range(spec.length)]
    return FrameSequence(blur, ids), FrameSequence(sharp, list(ids))


def sequence_id(index: int) -> str:
    return f"seq{index:03d}"


def write_dataset(spec: SynthSpec, out_root: Union[str, Path]) -> List[Path]:
    """Write ``<out>/<seq_id>/blur|sharp/%06d.ppm`` for every sequence"""
    spec.validate()
    out_root = Path(out_root)

    def one(index: int) -> Path:
        blur, sharp = generate_synthetic(spec, index)
        seq_dir = out_root / sequence_id(index)
        save_sequence(seq_dir / BLUR_DIR, blur.frames, blur.ids)
        save_sequence(seq_dir / SHARP_DIR, sharp.frames, sharp.ids)
        return seq_dir

    workers = min(worker_count(), spec.num_sequences)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        dirs = list(
            tqdm(
                pool.map(one, range(spec.num_sequences)),
                total=spec.num_sequences,
                desc="synth",
                disable=spec.num_sequences < 2,
            )
        )
    logger.info(f"Wrote {len(dirs)} synthetic sequences to {out_root}")
    return dirs
