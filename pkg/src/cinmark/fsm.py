"""Haar-domain fusion of the mapped watermark with the cover, and its split."""

from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor
from .core import functional as F


def fuse(psi_wm: Tensor, cover, strength: float = 1.0) -> Tensor:
    """Watermarked image ``ihaar(strength * psi_wm + haar(cover))``.

    No clamping here; the training graph stays unclamped and :func:`export`
    handles the image range.
    """
    cover = as_tensor(cover)
    if strength < 0:
        raise ValueError(f"strength must be non-negative, got {strength}")
    B, C, H, W = cover.shape
    if psi_wm.shape != (B, 4 * C, H // 2, W // 2):
        raise ValueError(f"watermark part {psi_wm.shape} does not match cover {cover.shape} in the Haar domain")
    return F.ihaar2d(psi_wm * float(strength) + F.haar2d(cover))


def prepare_inverse(image) -> Tensor:
    """(B, 3, H, W) -> (B, 24, H/2, W/2): the Haar image fed to both inverse branches."""
    r = F.haar2d(as_tensor(image))
    return F.channel_concat([r, r])


def fuse_baseline(psi: Tensor) -> Tensor:
    """Channel-average fusion of both IM outputs (the invertible-only baseline)."""
    if psi.ndim != 4 or psi.shape[1] % 2:
        raise ValueError(f"expected (B, 2k, h, w), got {psi.shape}")
    half = psi.shape[1] // 2
    image_part, wm_part = F.channel_split(psi, [half, half])
    return F.ihaar2d((image_part + wm_part) * 0.5)


def export(image) -> np.ndarray:
    """Clamp to [0, 1] and quantise to 8 bits; returns uint8 NCHW."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / 255.0
