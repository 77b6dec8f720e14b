"""Bit error rate, PSNR and SSIM."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

PSNR_IDENTICAL = 100.0  # reported instead of +inf


def to_uint8(images) -> np.ndarray:
    """[0, 1] floats -> 8-bit values (uint8 input passes through)."""
    a = np.asarray(images)
    if a.dtype == np.uint8:
        return a
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def ber(extracted, embedded) -> float:
    """Bit error rate in percent over all bits."""
    a = np.asarray(extracted).astype(np.int64)
    b = np.asarray(embedded).astype(np.int64)
    if a.shape != b.shape:
        raise ValueError(f"message shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)) * 100.0)


def accuracy(extracted, embedded) -> float:
    return 100.0 - ber(extracted, embedded)


def psnr(a, b, data_range: float = 255.0) -> float:
    """10 log10(MAX^2 / MSE); identical inputs give ``PSNR_IDENTICAL``.

    Pass 8-bit images (see :func:`to_uint8`) for the usual reporting.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * math.log10(data_range ** 2 / mse))


def _valid_filter(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    # separable "valid" correlation over the last two axes
    k = len(g1)
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2)
    tmp = np.tensordot(win, g1, axes=([-1], [0]))
    win = np.lib.stride_tricks.sliding_window_view(tmp, k, axis=-1)
    return np.tensordot(win, g1, axes=([-1], [0]))


def ssim(a, b, data_range: float = 255.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all valid Gaussian windows and channels.

    Inputs are (..., H, W) arrays on a common scale of ``data_range``.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.shape[-1] < win_size or x.shape[-2] < win_size:
        raise ValueError(f"image extent {x.shape[-2:]} smaller than the {win_size}x{win_size} window")
    t = np.arange(win_size) - (win_size - 1) / 2
    g1 = np.exp(-(t ** 2) / (2 * sigma ** 2))
    g1 /= g1.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x, mu_y = _valid_filter(x, g1), _valid_filter(y, g1)
    sxx = _valid_filter(x * x, g1) - mu_x ** 2
    syy = _valid_filter(y * y, g1) - mu_y ** 2
    sxy = _valid_filter(x * y, g1) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricRow:
    noise: str
    factor: str
    psnr_cover: float  # cover vs watermarked
    psnr_noised: Optional[float]  # watermarked vs attacked; None for Identity
    ssim: float
    acc: float  # routed decoder
    acc_im: float
    acc_niam: Optional[float] = None
    route_niam: Optional[float] = None  # percent of images sent to NIAM

    @property
    def ber(self) -> float:
        return 100.0 - self.acc


@dataclass
class MetricReport:
    rows: List[MetricRow] = field(default_factory=list)
    per_image: List[dict] = field(default_factory=list)

    COLUMNS = ("noise", "factor", "psnr1_db", "psnr2_db", "ssim", "acc_pct", "ber_pct",
               "acc_im_pct", "acc_niam_pct", "route_niam_pct")

    def _cells(self, r: MetricRow) -> list:
        def f(v, p=2):
            return "" if v is None else f"{v:.{p}f}"
        return [r.noise, r.factor, f(r.psnr_cover), f(r.psnr_noised), f(r.ssim, 4), f(r.acc),
                f(r.ber), f(r.acc_im), f(r.acc_niam), f(r.route_niam, 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow(self._cells(r))
        return buf.getvalue()

    def to_text(self) -> str:
        table = [list(self.COLUMNS)] + [["-" if c == "" else c for c in self._cells(r)] for r in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(self.COLUMNS))]
        lines = ["  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in table]
        lines.insert(1, "  ".join("-" * wd for wd in widths))
        return "\n".join(lines) + "\n"

    def row(self, noise: str) -> MetricRow:
        for r in self.rows:
            if r.noise == noise:
                return r
        raise KeyError(noise)


def mean_over(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else float("nan")
