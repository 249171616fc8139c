import numpy as np
import pytest

from pahs.errors import ContractError, FrameIOError, ShapeError
from pahs.sequence.frames_io import (
    frame_dirs,
    list_frames,
    load_dataset,
    load_sequence,
    save_sequence,
    to_uint8,
)


def _frames(count, size=16):
    rng = np.random.default_rng(0)
    return [
        rng.integers(0, 256, (1, 3, size, size)).astype(np.float32) / 255.0
        for _ in range(count)
    ]


def test_ppm_frames_keep_8bit_values(tmp_path):
    """Test that frames on the 8-bit grid survive a PPM write and read exactly"""
    frames = _frames(3)
    ids = ["000000", "000001", "000002"]

    save_sequence(tmp_path, frames, ids)
    seq = load_sequence(tmp_path)

    assert seq.ids == ids
    assert all(p.suffix == ".ppm" for p in list_frames(tmp_path))
    assert (tmp_path / "000000.ppm").read_bytes()[:2] == b"P6"
    for a, b in zip(frames, seq.frames):
        assert b.dtype == np.float32
        np.testing.assert_array_equal(to_uint8(a), to_uint8(b))


def test_channel_order_is_rgb(tmp_path):
    frame = np.zeros((1, 3, 16, 16), dtype=np.float32)
    frame[0, 0] = 1.0

    save_sequence(tmp_path, [frame], ["000000"])
    loaded = load_sequence(tmp_path).frames[0]

    assert loaded[0, 0].min() == 1.0
    assert loaded[0, 1:].max() == 0.0


def test_to_uint8_rounds_to_nearest():
    assert to_uint8(np.full((1, 3, 1, 1), 0.6 / 255.0))[0, 0, 0] == 1
    assert to_uint8(np.full((1, 3, 1, 1), 0.4 / 255.0))[0, 0, 0] == 0
    assert to_uint8(np.full((1, 3, 1, 1), 2.0))[0, 0, 0] == 255
    with pytest.raises(ShapeError):
        to_uint8(np.zeros((2, 3, 1, 1)))


def test_stride_keeps_every_nth_frame(tmp_path):
    frames = _frames(5)
    save_sequence(tmp_path, frames, [f"{i:06d}" for i in range(5)], ".pt4")

    seq = load_sequence(tmp_path, stride=2)

    assert seq.ids == ["000000", "000002", "000004"]
    np.testing.assert_array_equal(seq.frames[1], frames[2])


def test_empty_directory_is_a_contract_error(tmp_path):
    with pytest.raises(ContractError, match="no frames found"):
        load_sequence(tmp_path)
    with pytest.raises(ContractError):
        list_frames(tmp_path, stride=0)


def test_missing_directory_is_an_io_error(tmp_path):
    with pytest.raises(FrameIOError):
        load_sequence(tmp_path / "missing")


def test_dataset_pairs_must_share_names(tmp_path):
    """Test that blur and sharp directories must hold the same frame names"""
    seq_dir = tmp_path / "seq000"
    save_sequence(seq_dir / "blur", _frames(2), ["000000", "000001"])
    save_sequence(seq_dir / "sharp", _frames(2), ["000000", "000002"])

    with pytest.raises(ContractError):
        load_dataset(tmp_path)


def test_dataset_lists_sequences(tmp_path):
    for name in ("seq000", "seq001"):
        save_sequence(tmp_path / name / "blur", _frames(2), ["000000", "000001"])
        save_sequence(tmp_path / name / "sharp", _frames(2), ["000000", "000001"])

    pairs = load_dataset(tmp_path)

    assert len(pairs) == 2
    assert len(pairs[0][0]) == 2


def test_frame_dirs_finds_nested_directories(tmp_path):
    save_sequence(tmp_path / "a", _frames(1), ["000000"])
    save_sequence(tmp_path / "b" / "c", _frames(1), ["000000"])

    found = frame_dirs(tmp_path)

    assert list(found) == ["a", "b/c"]
