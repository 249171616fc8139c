"""
PSNR and SSIM on frames with values in [0, max_val].

SSIM uses an 11x11 Gaussian window with sigma 1.5, C1 = (0.01 * max_val)^2,
C2 = (0.03 * max_val)^2, evaluated at valid window positions only and
averaged over positions and channels.
"""

import logging
import math
from typing import Dict, List, Sequence

import cv2
import numpy as np

from pahs.errors import ShapeError

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _image(x, name: str) -> np.ndarray:
    """Accept (1, C, H, W), (C, H, W) or (H, W); return float64 (C, H, W)"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError(name, "batch", 1, arr.shape[0])
        arr = arr[0]
    elif arr.ndim == 2:
        arr = arr[None]
    elif arr.ndim != 3:
        raise ShapeError(name, "rank", "2, 3 or 4", arr.ndim)
    return arr


def psnr(L, S, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / MSE); identical inputs give +inf"""
    a, b = np.asarray(L, dtype=np.float64), np.asarray(S, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("psnr", "shape", b.shape, a.shape)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """2-D window whose rows and columns are OpenCV's normalized Gaussian kernel"""
    g = cv2.getGaussianKernel(size, sigma, ktype=cv2.CV_64F)
    return g @ g.T


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means of each (H, W) plane at valid positions only"""
    r = SSIM_WINDOW // 2
    planes = [
        cv2.GaussianBlur(
            np.ascontiguousarray(plane),
            (SSIM_WINDOW, SSIM_WINDOW),
            SSIM_SIGMA,
            sigmaY=SSIM_SIGMA,
            borderType=cv2.BORDER_REFLECT_101,
        )
        for plane in img
    ]
    return np.stack(planes)[:, r : img.shape[1] - r, r : img.shape[2] - r]


def ssim_map(L, S, max_val: float = 1.0) -> np.ndarray:
    """Local SSIM at every valid window position, shaped (C, H-10, W-10)"""
    x, y = _image(L, "ssim.L"), _image(S, "ssim.S")
    if x.shape != y.shape:
        raise ShapeError("ssim", "shape", y.shape, x.shape)
    for axis, size in (("height", x.shape[1]), ("width", x.shape[2])):
        if size < SSIM_WINDOW:
            raise ShapeError("ssim", axis, f">= {SSIM_WINDOW}", size)
    c1 = (K1 * max_val) ** 2
    c2 = (K2 * max_val) ** 2

    mu_x = _filter_valid(x)
    mu_y = _filter_valid(y)
    s_xx = _filter_valid(x * x) - mu_x * mu_x
    s_yy = _filter_valid(y * y) - mu_y * mu_y
    s_xy = _filter_valid(x * y) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * s_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (s_xx + s_yy + c2)
    return num / den


def ssim(L, S, max_val: float = 1.0) -> float:
    """Mean local SSIM, averaged over channels"""
    local = ssim_map(L, S, max_val)
    return float(np.mean([channel.mean() for channel in local]))


def format_metric(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def evaluate_pairs(
    preds: Sequence[np.ndarray], targets: Sequence[np.ndarray]
) -> Dict[str, float]:
    """Mean PSNR and SSIM over aligned frame lists.

    Frames reproduced exactly are left out of the PSNR mean; the mean is
    +inf only when every frame matches.
    """
    if len(preds) != len(targets):
        raise ShapeError("evaluate", "frames", len(targets), len(preds))
    psnrs: List[float] = [psnr(p, t) for p, t in zip(preds, targets)]
    ssims: List[float] = [ssim(p, t) for p, t in zip(preds, targets)]
    if any(math.isinf(v) for v in psnrs):
        mean_psnr = math.inf if all(math.isinf(v) for v in psnrs) else float(
            np.mean([v for v in psnrs if not math.isinf(v)])
        )
    else:
        mean_psnr = float(np.mean(psnrs))
    return {"psnr": mean_psnr, "ssim": float(np.mean(ssims)), "frames": len(preds)}
