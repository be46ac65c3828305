"""Pixel-level image metrics: luminance, global-window SSIM, difference maps."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

LUMA = np.array([0.2126, 0.7152, 0.0722])
K1, K2 = 0.01, 0.03


def luminance(r: float, g: float, b: float) -> float:
    """Luminance in [0, 1] of one pixel with channels in [0, 255]."""
    for name, v in (("R", r), ("G", g), ("B", b)):
        if not 0 <= v <= 255:
            raise ContractError(f"channel {name}={v} outside [0, 255]")
    # integer-scaled coefficients keep white exactly 1 for integer channels
    return (2126 * r + 7152 * g + 722 * b) / 2_550_000


def luminance_image(img: np.ndarray) -> np.ndarray:
    """Per-pixel luminance of an (H, W, 3) or (H, W, 1) image with values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    if img.shape[-1] != 3:
        raise DimensionError(f"expected 1 or 3 channels, got shape {img.shape}")
    return img @ LUMA


def ssim(x: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> float:
    """SSIM computed over a single window spanning the whole image."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = x.mean(), y.mean()
    vx = np.mean((x - mx) ** 2)
    vy = np.mean((y - my) ** 2)
    cov = np.mean((x - mx) * (y - my))
    return float((2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def ssim_rgb(x: np.ndarray, y: np.ndarray) -> float:
    """SSIM of two RGB images after luminance conversion."""
    return ssim(luminance_image(x), luminance_image(y))


def diff_heatmap(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel mean over channels of |x - y|."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"diff_heatmap: shape mismatch {x.shape} vs {y.shape}")
    d = np.abs(x - y)
    return d.mean(axis=-1) if d.ndim == 3 else d
