"""Baseline JPEG pixel pipeline and its differentiable low-pass surrogate.

The real codec runs everything that changes pixels (colour transform, 4:2:0
subsampling, 8x8 DCT, quantisation); entropy coding is lossless and skipped.
"""

from __future__ import annotations

import numpy as np

from .core import Tensor
from .core import functional as F

# ITU-T T.81 Annex K, tables K.1 (luminance) and K.2 (chrominance)
LUMA_TABLE = np.array(
    [[16, 11, 10, 16, 24, 40, 51, 61],
     [12, 12, 14, 19, 26, 58, 60, 55],
     [14, 13, 16, 24, 40, 57, 69, 56],
     [14, 17, 22, 29, 51, 87, 80, 62],
     [18, 22, 37, 56, 68, 109, 103, 77],
     [24, 35, 55, 64, 81, 104, 113, 92],
     [49, 64, 78, 87, 103, 121, 120, 101],
     [72, 92, 95, 98, 112, 100, 103, 99]],
    dtype=np.int64,
)
CHROMA_TABLE = np.array(
    [[17, 18, 24, 47, 99, 99, 99, 99],
     [18, 21, 26, 66, 99, 99, 99, 99],
     [24, 26, 56, 99, 99, 99, 99, 99],
     [47, 66, 99, 99, 99, 99, 99, 99],
     [99, 99, 99, 99, 99, 99, 99, 99],
     [99, 99, 99, 99, 99, 99, 99, 99],
     [99, 99, 99, 99, 99, 99, 99, 99],
     [99, 99, 99, 99, 99, 99, 99, 99]],
    dtype=np.int64,
)

# BT.601 full range (JFIF)
RGB_TO_YCBCR = np.array(
    [[0.299, 0.587, 0.114],
     [-0.168736, -0.331264, 0.5],
     [0.5, -0.418688, -0.081312]],
)
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)


def quality_scale(quality: int) -> int:
    """IJG percentage scaling for a quality in [1, 100]."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quality_tables(quality: int):
    """(luma, chroma) quantisation tables for ``quality``, entries in [1, 255]."""
    scale = quality_scale(quality)
    tables = []
    for base in (LUMA_TABLE, CHROMA_TABLE):
        t = (base * scale + 50) // 100
        tables.append(np.clip(t, 1, 255))
    return tables[0], tables[1]


# ---------------------------------------------------------------------------
# real codec (numpy, non-differentiable)
# ---------------------------------------------------------------------------

def _pad_edge(a: np.ndarray, mult: int) -> np.ndarray:
    H, W = a.shape[-2:]
    ph, pw = (-H) % mult, (-W) % mult
    if ph == 0 and pw == 0:
        return a
    pad = [(0, 0)] * (a.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(a, pad, mode="edge")


def _quantise_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Level-shifted DCT, quantise, dequantise, inverse DCT for (..., H, W) planes."""
    coef = F._block_dct(plane - 128.0)
    H, W = plane.shape[-2:]
    q = np.tile(table.astype(np.float64), (H // 8, W // 8))
    coef = np.round(coef / q) * q
    return F._block_dct(coef, inverse=True) + 128.0


def jpeg_real(images: np.ndarray, quality: int = 50) -> np.ndarray:
    """Compress/decompress a (B, 3, H, W) batch in [0, 1]; returns 8-bit-valued floats in [0, 1]."""
    qy, qc = quality_tables(quality)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"jpeg_real expects (B, 3, H, W), got {images.shape}")
    B, _, H, W = images.shape
    px = np.round(np.clip(images, 0.0, 1.0) * 255.0)
    ycc = np.einsum("oc,bchw->bohw", RGB_TO_YCBCR, px)
    ycc[:, 1:] += 128.0
    ycc = _pad_edge(ycc, 16)
    Hp, Wp = ycc.shape[-2:]

    y = _quantise_plane(ycc[:, 0], qy)
    chroma = ycc[:, 1:].reshape(B, 2, Hp // 2, 2, Wp // 2, 2).mean(axis=(3, 5))
    chroma = _quantise_plane(chroma, qc)
    chroma = np.repeat(np.repeat(chroma, 2, axis=2), 2, axis=3)

    out = np.concatenate([y[:, None], chroma], axis=1)
    out[:, 1:] -= 128.0
    rgb = np.einsum("oc,bchw->bohw", YCBCR_TO_RGB, out)[:, :, :H, :W]
    return (np.round(np.clip(rgb, 0.0, 255.0)) / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# differentiable surrogate
# ---------------------------------------------------------------------------

def low_frequency_mask(keep: int) -> np.ndarray:
    m = np.zeros((8, 8))
    m[:keep, :keep] = 1.0
    return m


def _reflect_operator(n: int, total: int) -> np.ndarray:
    """(total, n) matrix that reflect-pads a length-n axis at its end."""
    idx = np.arange(total)
    period = 2 * (n - 1) if n > 1 else 1
    r = idx % period
    src = np.where(r < n, r, period - r)
    op = np.zeros((total, n))
    op[idx, src] = 1.0
    return op


def jpeg_mask(image: Tensor, luma_keep: int = 5, chroma_keep: int = 3) -> Tensor:
    """Zero high-frequency DCT coefficients per 8x8 block in YCbCr space.

    A linear projection, so applying it twice equals applying it once.
    """
    B, C, H, W = image.shape
    if C != 3:
        raise ValueError(f"jpeg_mask expects 3 channels, got {C}")
    Hp, Wp = H + (-H) % 8, W + (-W) % 8
    x = image
    if (Hp, Wp) != (H, W):
        x = F.separable_linear(x, _reflect_operator(H, Hp), _reflect_operator(W, Wp))
    ycc = F.channel_mix(x, RGB_TO_YCBCR, [0.0, 0.5, 0.5])
    mask = np.stack([low_frequency_mask(luma_keep), low_frequency_mask(chroma_keep), low_frequency_mask(chroma_keep)])
    mask = np.tile(mask, (1, Hp // 8, Wp // 8)).astype(image.dtype)
    kept = F.idct8x8(F.dct8x8(ycc) * mask)
    rgb = F.channel_mix(kept - np.array([0.0, 0.5, 0.5], dtype=image.dtype)[None, :, None, None], YCBCR_TO_RGB)
    if (Hp, Wp) != (H, W):
        rgb = rgb[:, :, :H, :W]
    return rgb
