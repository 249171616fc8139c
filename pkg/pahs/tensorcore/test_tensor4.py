import numpy as np
import pytest

from pahs.errors import ContractError, FrameIOError, ShapeError
from pahs.tensorcore.tensor4 import (
    as_tensor4,
    load_pt4,
    pt4_dumps,
    pt4_loads,
    save_pt4,
)


def test_pt4_file_preserves_values_and_dtype(tmp_path):
    """Test that a float64 tensor written to PT4 reads back bit-exact"""
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))

    path = save_pt4(tmp_path / "x.pt4", x)
    y = load_pt4(path)

    assert y.dtype == np.float64
    np.testing.assert_array_equal(x, y)


def test_pt4_header_layout():
    """Test that the header is magic, version, dtype code and four u32 dims"""
    blob = pt4_dumps(np.zeros((1, 2, 3, 4), dtype=np.float32))

    assert blob[:4] == b"PAHS"
    assert blob[4] == 1
    assert blob[5] == 0
    assert len(blob) == 4 + 1 + 1 + 16 + 1 * 2 * 3 * 4 * 4


def test_pt4_rejects_bad_magic():
    blob = b"NOPE" + pt4_dumps(np.zeros((1, 1, 1, 1), dtype=np.float32))[4:]
    with pytest.raises(FrameIOError):
        pt4_loads(blob)


def test_pt4_rejects_truncated_payload():
    blob = pt4_dumps(np.zeros((1, 1, 2, 2), dtype=np.float32))
    with pytest.raises(FrameIOError):
        pt4_loads(blob[:-1])


def test_pt4_rejects_wrong_rank():
    with pytest.raises(ShapeError):
        pt4_dumps(np.zeros((2, 2)))


def test_load_missing_file_raises_frame_io_error(tmp_path):
    with pytest.raises(FrameIOError):
        load_pt4(tmp_path / "missing.pt4")


def test_as_tensor4_validates():
    """Test that as_tensor4 casts integers and rejects NaN"""
    assert as_tensor4(np.zeros((1, 1, 2, 2), dtype=np.int32)).dtype == np.float32
    with pytest.raises(ContractError):
        as_tensor4(np.full((1, 1, 1, 1), np.nan))
