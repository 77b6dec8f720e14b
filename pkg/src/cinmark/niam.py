"""Non-invertible decoder: conv stem, squeeze-and-excitation residual blocks, FC head."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Conv2d, Linear, Module, Tensor, as_tensor
from .core import functional as F


class SEBlock(Module):
    """``x + conv_path(x) * w`` with ``w = sigmoid(fc2(relu(fc1(gap(x)))))`` per channel."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 16):
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)

    def excitation(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.fc2(F.relu(self.fc1(F.global_avg_pool(x)))))

    def conv_path(self, x: Tensor) -> Tensor:
        return self.conv2(F.leaky_relu(self.conv1(x)))

    def __call__(self, x: Tensor) -> Tensor:
        w = self.excitation(x)
        B, C = w.shape
        return x + self.conv_path(x) * w.reshape(B, C, 1, 1)


class NIAM(Module):
    def __init__(self, message_length: int, rng: np.random.Generator, stem: int = 64,
                 n_blocks: int = 4, reduction: int = 16, down: Sequence[int] = (128, 256)):
        self.L = message_length
        self.stem = Conv2d(3, stem, 3, rng)
        self.blocks = [SEBlock(stem, rng, reduction) for _ in range(n_blocks)]
        chans = [stem] + list(down)
        self.downs = [Conv2d(a, b, 3, rng, stride=2, padding=1) for a, b in zip(chans[:-1], chans[1:])]
        self.downs.append(Conv2d(chans[-1], chans[-1], 3, rng, stride=2, padding=1))
        self.head = Linear(chans[-1], message_length, rng)

    def __call__(self, image: Tensor) -> Tensor:
        """(B, 3, H, W) -> (B, L) logits trained toward {0,1}."""
        image = as_tensor(image)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"NIAM expects (B, 3, H, W), got {image.shape}")
        h = F.leaky_relu(self.stem(image))
        for block in self.blocks:
            h = block(h)
        for down in self.downs:
            h = F.leaky_relu(down(h))
        return self.head(F.global_avg_pool(h))
