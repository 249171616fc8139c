import numpy as np
import pytest

from pahs.errors import ConfigError
from pahs.sequence.frames_io import load_dataset
from pahs.traineval.synth import (
    SynthSpec,
    blur_from_substeps,
    generate_synthetic,
    render_substeps,
    sharp_from_substeps,
    substep_times,
    write_dataset,
)


def test_zero_displacement_gives_sharp_blur():
    """Test that static scenes produce blurry frames equal to the sharp ones"""
    spec = SynthSpec(height=32, width=32, length=3, max_displacement=0.0)

    blur, sharp = generate_synthetic(spec)

    for b, s in zip(blur.frames, sharp.frames):
        np.testing.assert_array_equal(b, s)


def test_blur_is_mean_of_substeps():
    """Test that regenerating the substeps of a frame reproduces its blur"""
    spec = SynthSpec(height=32, width=32, length=4, seed=5)
    blur, sharp = generate_synthetic(spec)

    renders = render_substeps(spec, 2)

    assert len(renders) == spec.substeps
    np.testing.assert_array_equal(blur_from_substeps(renders), blur.frames[2])
    np.testing.assert_array_equal(sharp_from_substeps(renders), sharp.frames[2])
    expected = np.mean([r.astype(np.float64) for r in renders], axis=0) / 255.0
    actual = blur.frames[2][0].transpose(1, 2, 0)
    np.testing.assert_allclose(actual, expected, atol=1e-6)


def test_moving_scene_is_blurred():
    spec = SynthSpec(height=32, width=32, length=2, max_displacement=6.0, seed=1)
    blur, sharp = generate_synthetic(spec)
    assert any(not np.array_equal(b, s) for b, s in zip(blur.frames, sharp.frames))


def test_generation_is_deterministic():
    spec = SynthSpec(height=16, width=16, length=2, seed=9)
    a, _ = generate_synthetic(spec)
    b, _ = generate_synthetic(spec)
    c, _ = generate_synthetic(SynthSpec(height=16, width=16, length=2, seed=10))

    np.testing.assert_array_equal(a.frames[1], b.frames[1])
    assert not np.array_equal(a.frames[1], c.frames[1])


def test_substep_times_are_centred():
    times = substep_times(SynthSpec(substeps=5), 3)
    assert len(times) == 5
    assert np.mean(times) == pytest.approx(3.0)


def test_canvas_must_be_aligned():
    with pytest.raises(ConfigError):
        SynthSpec(height=20, width=32).validate()
    with pytest.raises(ConfigError):
        SynthSpec(height=8, width=8).validate()


def test_write_dataset_layout(tmp_path):
    """Test that written sequences load back as blur/sharp pairs"""
    spec = SynthSpec(height=16, width=16, length=2, num_sequences=2)

    dirs = write_dataset(spec, tmp_path)

    assert [d.name for d in dirs] == ["seq000", "seq001"]
    assert (tmp_path / "seq000" / "blur" / "000001.ppm").is_file()
    pairs = load_dataset(tmp_path)
    assert len(pairs) == 2
    assert pairs[0][0].ids == ["000000", "000001"]
