"""Attack pool.

Conventions where only a factor is given:

* Dropout / Cropout splice cover pixels into the watermarked image; Crop
  zeros everything outside the kept rectangle.
* GaussianBlur uses sigma = k / 4 with reflect padding.
* Brightness, Contrast, Saturation draw a per-image factor uniformly from
  ``[max(0, 2 - f), f]``. Brightness scales pixels, Contrast blends with
  the mean grey level, Saturation blends with the per-pixel grey level
  (BT.601 luma weights).
* Hue rotates chroma in YIQ space by an angle of ``h`` turns,
  ``h ~ U[-f, f]``. That is a linear map of RGB, so gradients pass.
* RealJpeg output is a fresh leaf: nothing upstream receives gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import jpeg
from .core import Tensor, as_tensor
from .core import functional as F

KINDS = (
    "Identity", "JpegMask", "RealJpeg", "Crop", "Cropout", "Resize", "GaussianBlur",
    "SaltPepper", "GaussianNoise", "Dropout", "Brightness", "Contrast", "Saturation", "Hue",
)

DEFAULT_FACTORS: Dict[str, Optional[float]] = {
    "Identity": None,
    "JpegMask": None,
    "RealJpeg": 50,
    "Crop": 0.035,
    "Cropout": 0.3,
    "Resize": 0.5,
    "GaussianBlur": 7,
    "SaltPepper": 0.1,
    "GaussianNoise": 25,
    "Dropout": 0.3,
    "Brightness": 2,
    "Contrast": 2,
    "Saturation": 2,
    "Hue": 0.1,
}

DIFFERENTIABLE = frozenset(k for k in KINDS if k != "RealJpeg")

_ALIASES = {k.lower(): k for k in KINDS}
_ALIASES.update({"jpeg": "RealJpeg", "blur": "GaussianBlur", "gausblur": "GaussianBlur",
                 "gausnoise": "GaussianNoise", "saltandpepper": "SaltPepper", "none": "Identity"})

LUMA = np.array([0.299, 0.587, 0.114])
RGB_TO_YIQ = np.array([[0.299, 0.587, 0.114],
                       [0.595716, -0.274453, -0.321263],
                       [0.211456, -0.522591, 0.311135]])
YIQ_TO_RGB = np.linalg.inv(RGB_TO_YIQ)


class NoiseError(ValueError):
    pass


def canonical_kind(name: str) -> str:
    key = name.replace("_", "").replace("-", "").replace("&", "").lower()
    if key not in _ALIASES:
        raise NoiseError(f"unknown noise kind {name!r}; expected one of {', '.join(KINDS)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    factor: Optional[float] = None

    def __post_init__(self):
        kind = canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.factor is None:
            object.__setattr__(self, "factor", DEFAULT_FACTORS[kind])
        _validate(kind, self.factor)

    @property
    def differentiable(self) -> bool:
        return self.kind in DIFFERENTIABLE

    @property
    def label(self) -> str:
        return self.kind if self.factor is None else f"{self.kind}({self.factor:g})"

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """``"RealJpeg"``, ``"RealJpeg:50"`` or ``"crop=0.035"``."""
        for sep in (":", "="):
            if sep in text:
                kind, value = text.split(sep, 1)
                return cls(kind.strip(), float(value))
        return cls(text.strip())


def _validate(kind: str, f: Optional[float]) -> None:
    if kind in ("Identity", "JpegMask"):
        if f is not None:
            raise NoiseError(f"{kind} takes no factor, got {f}")
        return
    if f is None or not math.isfinite(f):
        raise NoiseError(f"{kind} needs a finite factor")
    if kind in ("Crop", "Cropout", "Resize", "SaltPepper", "Dropout") and not 0 < f <= 1:
        raise NoiseError(f"{kind} ratio must be in (0, 1], got {f}")
    if kind == "RealJpeg" and not (1 <= f <= 100 and float(f).is_integer()):
        raise NoiseError(f"RealJpeg quality must be an integer in [1, 100], got {f}")
    if kind == "GaussianBlur" and not (f >= 3 and float(f).is_integer() and int(f) % 2 == 1):
        raise NoiseError(f"GaussianBlur kernel must be odd and >= 3, got {f}")
    if kind == "GaussianNoise" and f < 0:
        raise NoiseError(f"GaussianNoise sigma must be >= 0, got {f}")
    if kind in ("Brightness", "Contrast", "Saturation") and f <= 0:
        raise NoiseError(f"{kind} factor must be > 0, got {f}")
    if kind == "Hue" and not -0.5 <= f <= 0.5:
        raise NoiseError(f"Hue factor must be in [-0.5, 0.5], got {f}")


@dataclass(frozen=True)
class PoolConfig:
    name: str
    specs: Tuple[NoiseSpec, ...]
    superimpose_row: bool = False

    def __post_init__(self):
        if not self.specs:
            raise NoiseError(f"pool {self.name!r} is empty")

    def sample(self, rng: np.random.Generator) -> NoiseSpec:
        return self.specs[int(rng.integers(len(self.specs)))]


def _pool(name, kinds, superimpose_row=False):
    return PoolConfig(name, tuple(NoiseSpec(k) for k in kinds), superimpose_row)


POOLS: Dict[str, PoolConfig] = {
    "n_pool": _pool("n_pool", KINDS),
    "n_cj": _pool("n_cj", ("JpegMask", "RealJpeg")),
    "n_si": _pool("n_si", ("Identity", "Cropout", "Resize", "Saturation", "Hue", "Dropout",
                           "GaussianBlur", "SaltPepper", "GaussianNoise"), superimpose_row=True),
    "n_cp1": _pool("n_cp1", ("Identity", "RealJpeg", "Dropout", "Cropout", "Resize")),
    "n_cp2": _pool("n_cp2", ("Identity", "RealJpeg", "Crop", "Cropout", "GaussianBlur", "Dropout")),
}


def get_pool(spec) -> PoolConfig:
    """A pool by name, or an explicit list of spec strings / NoiseSpecs."""
    if isinstance(spec, PoolConfig):
        return spec
    if isinstance(spec, str):
        key = spec.lower().replace("^", "_")
        if key not in POOLS:
            raise NoiseError(f"unknown pool {spec!r}; expected one of {', '.join(POOLS)}")
        return POOLS[key]
    specs = tuple(s if isinstance(s, NoiseSpec) else NoiseSpec.parse(s) for s in spec)
    return PoolConfig("custom", specs)


# ---------------------------------------------------------------------------
# linear operators
# ---------------------------------------------------------------------------

def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel-centred bilinear resampling, (n_out, n_in), no antialiasing."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - w)
    np.add.at(m, (rows, i1), w)
    return m


def resize_bilinear(images: np.ndarray, h: int, w: int) -> np.ndarray:
    return bilinear_matrix(h, images.shape[-2]) @ images @ bilinear_matrix(w, images.shape[-1]).T


def gaussian_kernel1d(k: int, sigma: float) -> np.ndarray:
    t = np.arange(k) - (k - 1) / 2
    g = np.exp(-(t ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def blur_matrix(n: int, k: int) -> np.ndarray:
    """(n, n) Gaussian blur with reflect ("mirror without edge repeat") padding."""
    g = gaussian_kernel1d(k, k / 4.0)
    r = k // 2
    m = np.zeros((n, n))
    for i in range(n):
        for t in range(k):
            j = i + t - r
            while j < 0 or j >= n:
                j = -j if j < 0 else 2 * (n - 1) - j
            m[i, j] += g[t]
    return m


def rectangle_dims(ratio: float, H: int, W: int) -> Tuple[int, int]:
    """Integer (h, w) whose area is within one pixel of floor(ratio * H * W), near square."""
    area = int(math.floor(ratio * H * W))
    if area >= H * W:
        return H, W
    best = None
    centre = math.sqrt(area)
    for h in sorted(range(1, H + 1), key=lambda v: abs(v - centre)):
        w = max(1, round(area / h))
        if w > W:
            continue
        err = abs(h * w - area)
        if err <= 1:
            return h, w
        if best is None or err < best[0]:
            best = (err, h, w)
    return best[1], best[2]


def _rect_mask(ratio: float, B: int, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    h, w = rectangle_dims(ratio, H, W)
    mask = np.zeros((B, 1, H, W), dtype=np.float32)
    for b in range(B):
        hh, ww = (w, h) if (w <= H and h <= W and rng.random() < 0.5) else (h, w)
        y = int(rng.integers(0, H - hh + 1))
        x = int(rng.integers(0, W - ww + 1))
        mask[b, :, y:y + hh, x:x + ww] = 1.0
    return mask


def _jitter(f: float, B: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = sorted((max(0.0, 2.0 - f), f))
    return rng.uniform(lo, hi, size=(B, 1, 1, 1)).astype(np.float32)


def _grey(x: Tensor) -> Tensor:
    return F.channel_mix(x, LUMA[None, :])


def hue_matrix(turns: float) -> np.ndarray:
    a = 2 * math.pi * turns
    rot = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    return YIQ_TO_RGB @ rot @ RGB_TO_YIQ


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def apply(spec: NoiseSpec, wi: Tensor, cover=None, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Attack a watermarked batch. ``cover`` defaults to ``wi`` itself."""
    wi = as_tensor(wi)
    rng = rng if rng is not None else np.random.default_rng()
    cover_data = wi.data if cover is None else (cover.data if isinstance(cover, Tensor) else np.asarray(cover))
    if cover_data.shape != wi.shape:
        raise NoiseError(f"cover shape {cover_data.shape} differs from watermarked shape {wi.shape}")
    cover_data = cover_data.astype(wi.dtype)
    B, C, H, W = wi.shape
    kind, f = spec.kind, spec.factor

    if kind == "Identity":
        return wi
    if kind == "JpegMask":
        return jpeg.jpeg_mask(wi)
    if kind == "RealJpeg":
        return Tensor(jpeg.jpeg_real(wi.data, int(f)).astype(wi.dtype))
    if kind == "Dropout":
        keep = (rng.random((B, 1, H, W)) >= f).astype(wi.dtype)
        return wi * keep + cover_data * (1 - keep)
    if kind == "Cropout":
        keep = _rect_mask(f, B, H, W, rng).astype(wi.dtype)
        return wi * keep + cover_data * (1 - keep)
    if kind == "Crop":
        return wi * _rect_mask(f, B, H, W, rng).astype(wi.dtype)
    if kind == "Resize":
        h, w = max(1, int(math.floor(f * H))), max(1, int(math.floor(f * W)))
        small = F.separable_linear(wi, bilinear_matrix(h, H), bilinear_matrix(w, W))
        return F.separable_linear(small, bilinear_matrix(H, h), bilinear_matrix(W, w))
    if kind == "GaussianBlur":
        return F.separable_linear(wi, blur_matrix(H, int(f)), blur_matrix(W, int(f)))
    if kind == "GaussianNoise":
        return wi + rng.normal(0.0, f / 255.0, size=wi.shape).astype(wi.dtype)
    if kind == "SaltPepper":
        hit = (rng.random((B, 1, H, W)) < f).astype(wi.dtype)
        value = (rng.random((B, 1, H, W)) < 0.5).astype(wi.dtype)
        return wi * (1 - hit) + hit * value
    if kind == "Brightness":
        return wi * _jitter(f, B, rng)
    if kind == "Contrast":
        c = _jitter(f, B, rng)
        return wi * c + F.mean(_grey(wi), axis=(1, 2, 3), keepdims=True) * (1 - c)
    if kind == "Saturation":
        s = _jitter(f, B, rng)
        return wi * s + _grey(wi) * (1 - s)
    if kind == "Hue":
        turns = rng.uniform(-abs(f), abs(f), size=B)
        return F.concat([F.channel_mix(wi[b:b + 1], hue_matrix(t)) for b, t in enumerate(turns)], axis=0)
    raise NoiseError(f"unhandled noise kind {kind}")


def superimpose(specs: Sequence[NoiseSpec], wi: Tensor, cover=None, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Apply every spec in order, each to the previous output."""
    rng = rng if rng is not None else np.random.default_rng()
    out = as_tensor(wi)
    for spec in specs:
        out = apply(spec, out, cover, rng)
    return out


def is_jpeg(spec: NoiseSpec) -> bool:
    return spec.kind in ("JpegMask", "RealJpeg")
