"""Affine coupling layers over a watermark stream and an image stream.

Forward (one layer)::

    im' = im + phi(wm)
    wm' = wm * e(rho(im')) + eta(im')

with ``e(s) = exp(alpha * tanh(s / alpha))``. The inverse evaluates the
subnets at the same points, so the map is bijective for any parameters.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .core import Conv2d, Module, Tensor
from .core import functional as F

STREAM_CHANNELS = 12


class DenseBlock(Module):
    """Five 3x3 convs, each seeing the block input and all earlier outputs.

    The last conv is zero-initialised so a fresh block outputs zeros.
    """

    def __init__(self, channels: int, growth: int, rng: np.random.Generator):
        self.channels = channels
        self.convs = [Conv2d(channels + i * growth, growth, 3, rng) for i in range(4)]
        self.convs.append(Conv2d(channels + 4 * growth, channels, 3, rng, zero_init=True))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"dense block expects {self.channels} input channels, got shape {x.shape}")
        feats = [x]
        for conv in self.convs[:-1]:
            feats.append(F.leaky_relu(conv(F.channel_concat(feats))))
        return self.convs[-1](F.channel_concat(feats))


class CouplingLayer(Module):
    def __init__(self, growth: int, rng: np.random.Generator, clamp: float = 2.0):
        self.clamp = clamp
        self.phi = DenseBlock(STREAM_CHANNELS, growth, rng)
        self.rho = DenseBlock(STREAM_CHANNELS, growth, rng)
        self.eta = DenseBlock(STREAM_CHANNELS, growth, rng)

    def forward(self, wm: Tensor, im: Tensor) -> Tuple[Tensor, Tensor]:
        _check_streams(wm, im)
        im = im + self.phi(wm)
        wm = wm * F.exp_clamped(self.rho(im), self.clamp) + self.eta(im)
        return wm, im

    def inverse(self, wm: Tensor, im: Tensor) -> Tuple[Tensor, Tensor]:
        _check_streams(wm, im)
        # tanh is odd, so exp_clamped(-s) == 1 / exp_clamped(s)
        wm = (wm - self.eta(im)) * F.exp_clamped(-self.rho(im), self.clamp)
        im = im - self.phi(wm)
        return wm, im


def _check_streams(wm: Tensor, im: Tensor) -> None:
    if wm.shape != im.shape:
        raise ValueError(f"stream shapes differ: watermark {wm.shape} vs image {im.shape}")
    if wm.ndim != 4 or wm.shape[1] != STREAM_CHANNELS:
        raise ValueError(f"streams must be (B, {STREAM_CHANNELS}, h, w), got {wm.shape}")


class InvertibleModule(Module):
    def __init__(self, n_layers: int, rng: np.random.Generator, growth: int = 32, clamp: float = 2.0):
        if n_layers < 1:
            raise ValueError(f"need at least one coupling layer, got {n_layers}")
        self.layers = [CouplingLayer(growth, rng, clamp) for _ in range(n_layers)]

    def forward(self, wm: Tensor, im: Tensor) -> Tensor:
        """Returns the 24-channel map: channels 0-11 image part, 12-23 mapped watermark."""
        for layer in self.layers:
            wm, im = layer.forward(wm, im)
        return F.channel_concat([im, wm])

    def inverse(self, psi: Tensor) -> Tuple[Tensor, Tensor]:
        """24-channel map -> (watermark stream, image stream)."""
        if psi.ndim != 4 or psi.shape[1] != 2 * STREAM_CHANNELS:
            raise ValueError(f"inverse expects (B, 24, h, w), got {psi.shape}")
        im, wm = F.channel_split(psi, [STREAM_CHANNELS, STREAM_CHANNELS])
        for layer in reversed(self.layers):
            wm, im = layer.inverse(wm, im)
        return wm, im
