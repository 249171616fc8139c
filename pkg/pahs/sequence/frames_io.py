"""
Frame directories: zero-padded ``%06d.ppm`` (binary P6, 8-bit RGB) or
``%06d.pt4`` files. PPM frames load as float32 (1, 3, H, W) in [0, 1].
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import cv2
import numpy as np

from pahs.errors import ContractError, FrameIOError, ShapeError
from pahs.sequence.engine import FrameSequence
from pahs.tensorcore.tensor4 import load_pt4, save_pt4

logger = logging.getLogger(__name__)

FRAME_SUFFIXES = (".ppm", ".pt4")
BLUR_DIR = "blur"
SHARP_DIR = "sharp"

PathLike = Union[str, Path]


def list_frames(directory: PathLike, stride: int = 1) -> List[Path]:
    """Sorted frame files of ``directory``, keeping every ``stride``-th one"""
    directory = Path(directory)
    if stride < 1:
        raise ContractError(f"frame stride must be >= 1, got {stride}")
    if not directory.is_dir():
        raise FrameIOError(directory, "not a directory")
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    return paths[::stride]


def read_frame(path: PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pt4":
        return load_pt4(path)
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        logger.error(f"Error reading frame {path}")
        raise FrameIOError(path, "unreadable image")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return (rgb.transpose(2, 0, 1)[None].astype(np.float32) / 255.0).astype(np.float32)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) in [0, 1] -> (H, W, 3) uint8, rounding to nearest"""
    if frame.ndim != 4 or frame.shape[0] != 1:
        actual = frame.shape[0] if frame.ndim == 4 else frame.ndim
        raise ShapeError("frame", "batch", 1, actual)
    if frame.shape[1] != 3:
        raise ShapeError("frame", "channel", 3, frame.shape[1])
    scaled = np.floor(np.clip(frame[0], 0.0, 1.0) * 255.0 + 0.5)
    return scaled.transpose(1, 2, 0).astype(np.uint8)


def write_frame(path: PathLike, frame: np.ndarray) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".pt4":
        return save_pt4(path, frame)
    bgr = cv2.cvtColor(to_uint8(frame), cv2.COLOR_RGB2BGR)
    try:
        ok = cv2.imwrite(str(path), bgr, [cv2.IMWRITE_PXM_BINARY, 1])
    except cv2.error as e:
        logger.error(f"Error writing frame {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
    if not ok:
        logger.error(f"Error writing frame {path}")
        raise FrameIOError(path, "write failed")
    return path


def load_sequence(directory: PathLike, stride: int = 1) -> FrameSequence:
    paths = list_frames(directory, stride)
    if not paths:
        raise ContractError(f"no frames found in {directory}")
    frames = [read_frame(p) for p in paths]
    logger.debug(f"Loaded {len(frames)} frames from {directory}")
    return FrameSequence(frames, [p.stem for p in paths])


def save_sequence(
    directory: PathLike,
    frames: Sequence[np.ndarray],
    ids: Sequence[str],
    suffix: str = ".ppm",
) -> List[Path]:
    """Write frames as ``<id><suffix>``, mirroring the input naming"""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Error creating {directory}: {str(e)}")
        raise FrameIOError(directory, str(e)) from e
    written = [write_frame(directory / f"{i}{suffix}", f) for f, i in zip(frames, ids)]
    logger.info(f"Wrote {len(written)} frames to {directory}")
    return written


def list_sequences(root: PathLike) -> List[Path]:
    """Sequence directories under ``root`` that hold both blur/ and sharp/"""
    root = Path(root)
    if not root.is_dir():
        raise FrameIOError(root, "not a directory")
    if (root / BLUR_DIR).is_dir() and (root / SHARP_DIR).is_dir():
        return [root]
    return sorted(
        d
        for d in root.iterdir()
        if (d / BLUR_DIR).is_dir() and (d / SHARP_DIR).is_dir()
    )


def load_pair(
    sequence_dir: PathLike, stride: int = 1
) -> Tuple[FrameSequence, FrameSequence]:
    """(blur, sharp) sequences of one dataset sequence directory"""
    sequence_dir = Path(sequence_dir)
    blur = load_sequence(sequence_dir / BLUR_DIR, stride)
    sharp = load_sequence(sequence_dir / SHARP_DIR, stride)
    if blur.ids != sharp.ids:
        raise ContractError(f"{sequence_dir}: blur and sharp frame names differ")
    if blur.dims != sharp.dims:
        raise ShapeError(f"{sequence_dir}/sharp", "shape", blur.dims, sharp.dims)
    return blur, sharp


def load_dataset(
    root: PathLike, stride: int = 1
) -> List[Tuple[FrameSequence, FrameSequence]]:
    dirs = list_sequences(root)
    if not dirs:
        raise ContractError(f"no blur/sharp sequences found in {root}")
    return [load_pair(d, stride) for d in dirs]


def frame_dirs(root: PathLike) -> Dict[str, Path]:
    """Frame-holding directories under ``root`` (itself included) by relative path"""
    root = Path(root)
    if not root.is_dir():
        raise FrameIOError(root, "not a directory")
    found = {}
    for directory in sorted([root, *(p for p in root.rglob("*") if p.is_dir())]):
        if any(p.suffix.lower() in FRAME_SUFFIXES for p in directory.iterdir()):
            found[directory.relative_to(root).as_posix()] = directory
    return found
