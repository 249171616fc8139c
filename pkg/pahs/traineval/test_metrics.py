import math

import numpy as np
import pytest

from pahs.errors import ShapeError
from pahs.traineval.metrics import (
    evaluate_pairs,
    format_metric,
    gaussian_window,
    psnr,
    ssim,
    ssim_map,
)


def _random_image(seed=0, size=24):
    return np.random.default_rng(seed).uniform(0, 1, (1, 3, size, size))


def _ssim_at(x, y, i, j):
    """Local SSIM of one channel at window origin (i, j), by explicit loops"""
    w = gaussian_window()
    mx = my = sxx = syy = sxy = 0.0
    for a in range(11):
        for b in range(11):
            mx += w[a, b] * x[i + a, j + b]
            my += w[a, b] * y[i + a, j + b]
    for a in range(11):
        for b in range(11):
            sxx += w[a, b] * x[i + a, j + b] ** 2
            syy += w[a, b] * y[i + a, j + b] ** 2
            sxy += w[a, b] * x[i + a, j + b] * y[i + a, j + b]
    sxx -= mx * mx
    syy -= my * my
    sxy -= mx * my
    c1, c2 = 0.01**2, 0.03**2
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / (
        (mx * mx + my * my + c1) * (sxx + syy + c2)
    )


def test_psnr_known_offsets():
    """Test that uniform offsets of 0.1 and 1.0 give 20 dB and 0 dB"""
    zeros = np.zeros((1, 3, 16, 16))
    assert psnr(zeros + 0.1, zeros) == pytest.approx(20.0, abs=1e-9)
    assert psnr(zeros + 1.0, zeros) == 0.0


def test_psnr_identical_is_infinite():
    x = _random_image()
    assert psnr(x, x) == math.inf
    assert format_metric(psnr(x, x)) == "inf"
    assert format_metric(20.0) == "20.000000"


def test_ssim_identical_is_exactly_one():
    x = _random_image()
    assert ssim(x, x) == 1.0


def test_ssim_matches_loop_oracle():
    """Test the vectorised SSIM map against a scalar loop"""
    x = _random_image(1, size=13)[0, 0]
    y = np.clip(x + np.random.default_rng(2).normal(0, 0.1, x.shape), 0, 1)

    local = ssim_map(x, y)

    assert local.shape == (1, 3, 3)
    for i in range(3):
        for j in range(3):
            assert local[0, i, j] == pytest.approx(_ssim_at(x, y, i, j), abs=1e-9)


def test_ssim_of_inverted_image_is_negative():
    x = _random_image()
    assert ssim(x, 1.0 - x) < 0


def test_ssim_tolerates_small_noise():
    x = _random_image()
    noisy = x + np.random.default_rng(3).normal(0, 0.001, x.shape)
    assert ssim(x, noisy) >= 0.99


def test_ssim_rejects_small_images():
    with pytest.raises(ShapeError):
        ssim(np.zeros((1, 3, 10, 16)), np.zeros((1, 3, 10, 16)))


def test_evaluate_pairs_skips_exact_frames_in_psnr_mean():
    """Test that exactly reproduced frames do not turn the mean PSNR infinite"""
    x = _random_image()
    shifted = np.clip(x + 0.1, 0, 1)

    partial = evaluate_pairs([x, shifted], [x, x])
    exact = evaluate_pairs([x, x], [x, x])

    assert partial["psnr"] == pytest.approx(psnr(shifted, x))
    assert partial["frames"] == 2
    assert exact["psnr"] == math.inf
    assert exact["ssim"] == 1.0


def test_psnr_matches_loop_oracle():
    """Test PSNR against a scalar loop over every sample"""
    x = _random_image(4, size=12)
    y = np.clip(x + np.random.default_rng(5).normal(0, 0.05, x.shape), 0, 1)

    squared = 0.0
    for value_x, value_y in zip(x.ravel().tolist(), y.ravel().tolist()):
        squared += (value_x - value_y) ** 2
    expected = 10.0 * math.log10(1.0 / (squared / x.size))

    assert psnr(x, y) == pytest.approx(expected, abs=1e-9)
