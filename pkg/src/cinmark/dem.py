"""Message diffusion to a Haar-domain feature map, and extraction back to bits."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import Conv2d, ConvTranspose2d, Linear, Module, Tensor
from .core import functional as F

N_BRANCHES = 3


def _block_count(image_size: int, side: int) -> int:
    n = math.log2(image_size / side)
    if n < 1 or n != int(n):
        raise ValueError(f"image size {image_size} must be {side} times a power of two")
    return int(n)


def _stack_widths(n_blocks: int, widths: Sequence[int]) -> list:
    inner = list(widths)[: n_blocks - 1]
    if len(inner) < n_blocks - 1:
        inner += [inner[-1] if inner else 16] * (n_blocks - 1 - len(inner))
    return [1] + inner + [1]


class DiffusionBranch(Module):
    def __init__(self, L: int, hidden: int, image_size: int, widths: Sequence[int], rng):
        side = math.isqrt(hidden)
        self.side = side
        self.fc = Linear(L, hidden, rng)
        chans = _stack_widths(_block_count(image_size, side), widths)
        self.ups = [ConvTranspose2d(a, b, rng) for a, b in zip(chans[:-1], chans[1:])]

    def __call__(self, m: Tensor) -> Tensor:
        h = self.fc(m).reshape(m.shape[0], 1, self.side, self.side)
        for i, up in enumerate(self.ups):
            h = up(h)
            if i < len(self.ups) - 1:
                h = F.leaky_relu(h)
        return h


class ExtractionBranch(Module):
    def __init__(self, L: int, hidden: int, image_size: int, widths: Sequence[int], rng):
        side = math.isqrt(hidden)
        chans = _stack_widths(_block_count(image_size, side), widths)[::-1]
        self.downs = [Conv2d(a, b, 2, rng, stride=2) for a, b in zip(chans[:-1], chans[1:])]
        self.fc = Linear(hidden, L, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, down in enumerate(self.downs):
            h = down(h)
            if i < len(self.downs) - 1:
                h = F.leaky_relu(h)
        return self.fc(h.reshape(h.shape[0], -1))


class DEM(Module):
    """Diffusion (copy -> FC -> ConvT x n -> concat -> Haar) and its mirror extractor.

    The extractor has its own parameters; there is no exact inverse of an
    FC/ConvT stack, so the mirror network is trained jointly instead.
    """

    def __init__(self, message_length: int, image_size: int, rng: np.random.Generator,
                 hidden_length: int = 256, widths: Sequence[int] = (64, 32)):
        if math.isqrt(hidden_length) ** 2 != hidden_length:
            raise ValueError(f"hidden length {hidden_length} is not a perfect square")
        self.L = message_length
        self.image_size = image_size
        self.diffusion = [DiffusionBranch(message_length, hidden_length, image_size, widths, rng)
                          for _ in range(N_BRANCHES)]
        self.extraction = [ExtractionBranch(message_length, hidden_length, image_size, widths, rng)
                           for _ in range(N_BRANCHES)]

    def diffuse(self, bits) -> Tensor:
        """(B, L) bits in {0,1} -> (B, 12, H/2, W/2) features."""
        bits = bits.data if isinstance(bits, Tensor) else np.asarray(bits)
        if bits.ndim != 2 or bits.shape[1] != self.L:
            raise ValueError(f"message shape {bits.shape} does not match length L={self.L}")
        m = Tensor((bits - 0.5).astype(np.float32))
        planes = [branch(m) for branch in self.diffusion]
        return F.haar2d(F.channel_concat(planes))

    def extract(self, features: Tensor) -> Tensor:
        """(B, 12, H/2, W/2) -> (B, L) logits trained toward {0,1}."""
        half = self.image_size // 2
        if features.ndim != 4 or features.shape[1:] != (4 * N_BRANCHES, half, half):
            raise ValueError(
                f"features shape {features.shape} does not match (B, 12, {half}, {half})"
            )
        planes = F.channel_split(F.ihaar2d(features), [1] * N_BRANCHES)
        outs = [branch(p) for branch, p in zip(self.extraction, planes)]
        return average(outs)


def average(tensors: Sequence[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total * (1.0 / len(tensors))


def threshold(logits) -> np.ndarray:
    """Bits from logits trained toward {0,1}: 1 iff logit >= 0.5."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (data >= 0.5).astype(np.uint8)
