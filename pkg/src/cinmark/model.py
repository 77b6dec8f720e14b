"""The full watermarking network and its architecture hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

import numpy as np

from . import fsm, nsm
from .core import Module, Tensor, as_tensor, no_grad
from .core import functional as F
from .dem import DEM, threshold
from .inn import InvertibleModule
from .niam import NIAM
from .nsm import NSM

FUSIONS = ("strength", "average")


@dataclass
class ModelConfig:
    image_size: int = 128
    message_length: int = 30
    hidden_length: int = 256
    dem_widths: Tuple[int, ...] = (64, 32)
    n_layers: int = 8
    growth: int = 32
    clamp: float = 2.0
    niam_stem: int = 64
    niam_blocks: int = 4
    niam_reduction: int = 16
    niam_down: Tuple[int, ...] = (128, 256)
    nsm_widths: Tuple[int, ...] = (32, 64, 128)
    fusion: str = "strength"  # "average" is the invertible-only baseline fusion
    use_niam: bool = True

    def __post_init__(self):
        for name in ("dem_widths", "niam_down", "nsm_widths"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.image_size % 2:
            raise ValueError(f"image size must be even, got {self.image_size}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)


# Small enough to train on one CPU core in minutes; same topology.
PRESETS = {
    "full": {},
    "desk": dict(n_layers=1, growth=8, dem_widths=(32, 16), niam_stem=16, niam_blocks=2,
                 niam_reduction=4, niam_down=(32, 64), nsm_widths=(16, 32, 32)),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


@dataclass
class Extraction:
    bits: np.ndarray
    routes: list
    p_jpeg: np.ndarray
    bits_im: np.ndarray
    bits_niam: Optional[np.ndarray]


class CIN(Module):
    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0):
        self.config = config or ModelConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self.dem = DEM(c.message_length, c.image_size, rng, c.hidden_length, c.dem_widths)
        self.inn = InvertibleModule(c.n_layers, rng, c.growth, c.clamp)
        self.niam = NIAM(c.message_length, rng, c.niam_stem, c.niam_blocks, c.niam_reduction, c.niam_down)
        self.nsm = NSM(rng, c.nsm_widths)
        # set once a training step has updated NIAM/NSM; untrained decoders are never routed to
        self.niam_trained = False

    # -- parameter groups --------------------------------------------------
    def encoder_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith(("dem.", "inn."))]

    def decoder_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith(("niam.", "nsm."))]

    # -- forward paths -----------------------------------------------------
    def _check_image(self, image: Tensor) -> None:
        s = self.config.image_size
        if image.ndim != 4 or image.shape[1:] != (3, s, s):
            raise ValueError(f"expected images of shape (B, 3, {s}, {s}), got {image.shape}")

    def embed(self, cover, bits, strength: float = 1.0) -> Tuple[Tensor, Tensor]:
        """Returns (watermarked image, 24-channel IM output)."""
        cover = as_tensor(cover)
        self._check_image(cover)
        features = self.dem.diffuse(bits)
        psi = self.inn.forward(features, F.haar2d(cover))
        if self.config.fusion == "average":
            return fsm.fuse_baseline(psi), psi
        half = psi.shape[1] // 2
        _, psi_wm = F.channel_split(psi, [half, half])
        return fsm.fuse(psi_wm, cover, strength), psi

    def decode_im(self, image) -> Tuple[Tensor, Tensor]:
        """Invertible-path decode: (message logits, restored cover)."""
        image = as_tensor(image)
        self._check_image(image)
        wm_stream, im_stream = self.inn.inverse(fsm.prepare_inverse(image))
        return self.dem.extract(wm_stream), F.ihaar2d(im_stream)

    def decode_niam(self, image) -> Tensor:
        image = as_tensor(image)
        self._check_image(image)
        return self.niam(image)

    def extract(self, image, tau: float = 0.5) -> Extraction:
        """Bits routed by the noise classifier (inference only)."""
        image = as_tensor(image)
        with no_grad():
            bits_im = threshold(self.decode_im(image)[0])
            if not (self.config.use_niam and self.niam_trained):
                B = image.shape[0]
                return Extraction(bits_im, ["im"] * B, np.zeros(B), bits_im, None)
            bits_niam = threshold(self.decode_niam(image))
            p = self.nsm.classify(image)
        return Extraction(nsm.select(p, bits_im, bits_niam, tau), nsm.route_names(p, tau), p, bits_im, bits_niam)
