"""Upsampling mask decoder and the pooled classification head."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor


class MaskDecoder(nn.Module):
    """``stages`` rounds of 2x bilinear upsampling + 3x3 conv + ReLU, then a 1x1
    conv to one logit channel.

    Input is a channels-last feature grid; outputs are channels-first
    ``(B, 1, H, W)`` logits and the ``(B, C_last, H, W)`` penultimate map. If
    ``out_size`` is not reached exactly by the 2x stages, the last stage output
    is resized bilinearly.
    """

    def __init__(self, in_channels: int, channels: Sequence[int] = (32, 16, 16)):
        super().__init__()
        layers = []
        prev = in_channels
        for ch in channels:
            layers.append(nn.Conv2d(prev, ch, 3, padding=1))
            prev = ch
        self.convs = nn.ModuleList(layers)
        self.out_channels = prev
        self.to_mask = nn.Conv2d(prev, 1, 1)

    def forward(self, features: Tensor, out_size: tuple[int, int] | None = None) -> tuple[Tensor, Tensor]:
        if features.dim() != 4:
            raise ValueError(f"expected a (B, H, W, C) feature grid, got shape {tuple(features.shape)}")
        x = features.permute(0, 3, 1, 2)
        for conv in self.convs:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.relu(conv(x))
        if out_size is not None and tuple(x.shape[-2:]) != tuple(out_size):
            x = F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)
        return self.to_mask(x), x


class ClassificationHead(nn.Module):
    """Global average pooling followed by a two-layer MLP to a single logit."""

    def __init__(self, in_channels: int, hidden: int = 32):
        super().__init__()
        self.fc = nn.Sequential(nn.Linear(in_channels, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(x.mean(dim=(-2, -1))).squeeze(-1)


def decode_mask(features: Tensor, decoder: MaskDecoder, out_size=None) -> tuple[Tensor, Tensor]:
    return decoder(features, out_size)


def classify(penultimate: Tensor, head: ClassificationHead) -> Tensor:
    return head(penultimate)
