"""Reconstruction guided attention.

A second encoder pass on a slightly noised copy of the image yields features
``F_gau``; the per-element gap ``S = |F_gau - F|`` is turned into a spatial
softmax attention map that reweights the (enhanced) clean features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from dadf.backbone import ShapeMismatchError

REC_DATA = ("real", "fake", "both")


@dataclass
class RGAConfig:
    noise_mean: float = 0.0
    noise_variance: float = 1e-6
    inference_noise: bool = True
    seed: int = 1234
    # which samples the reconstruction loss is computed on
    rec_data: str = "real"

    def __post_init__(self) -> None:
        if self.noise_variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.noise_variance}")
        if self.rec_data not in REC_DATA:
            raise ValueError(f"rec_data must be one of {REC_DATA}, got {self.rec_data!r}")


def add_white_noise(
    x: Tensor,
    variance: float,
    mean: float = 0.0,
    generator: torch.Generator | None = None,
) -> Tensor:
    """``clamp(x + N(mean, variance), 0, 1)``; exact identity when variance is 0."""
    if variance < 0:
        raise ValueError(f"noise variance must be >= 0, got {variance}")
    if variance == 0 and mean == 0:
        return x.clone()
    noise = torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)
    return (x + mean + noise * variance**0.5).clamp(0.0, 1.0)


def feature_difference(f: Tensor, f_gau: Tensor) -> Tensor:
    if f.shape != f_gau.shape:
        raise ShapeMismatchError(f"feature shapes differ: {tuple(f.shape)} vs {tuple(f_gau.shape)}")
    return (f_gau - f).abs()


def spatial_softmax(x: Tensor) -> Tensor:
    """Softmax over all spatial positions, independently per sample and channel."""
    b, h, w, c = x.shape
    return x.reshape(b, h * w, c).softmax(dim=1).reshape(b, h, w, c)


class RGA(nn.Module):
    """Refinement ``F + softmax_spatial(phi(S)) * phi(F)`` with one shared
    1x1 (per-token linear) enhancer ``phi``."""

    def __init__(self, channels: int):
        super().__init__()
        self.enhancer = nn.Linear(channels, channels)

    def forward(self, f: Tensor, s: Tensor) -> tuple[Tensor, Tensor]:
        if f.shape != s.shape:
            raise ShapeMismatchError(f"feature shapes differ: {tuple(f.shape)} vs {tuple(s.shape)}")
        attention = spatial_softmax(self.enhancer(s))
        return attention * self.enhancer(f) + f, attention


def rga_refine(f: Tensor, s: Tensor, module: RGA) -> Tensor:
    return module(f, s)[0]


def reconstruction_loss(f: Tensor, f_gau: Tensor, labels: Tensor, on: str = "real") -> Tensor:
    """Mean over selected samples of the per-sample L1 norm ``sum |F_gau - F|``.

    ``labels`` uses 0 = real, 1 = fake. ``on`` picks which samples count
    ("real", "fake" or "both"); the divisor is the number of selected samples,
    and a batch with none selected gives an exact zero that is still connected
    to the graph (zero gradient everywhere).
    """
    if f.shape[0] == 0:
        raise ValueError("reconstruction loss on an empty batch")
    if f.shape != f_gau.shape:
        raise ShapeMismatchError(f"feature shapes differ: {tuple(f.shape)} vs {tuple(f_gau.shape)}")
    labels = labels.reshape(-1)
    if on == "real":
        keep = labels == 0
    elif on == "fake":
        keep = labels == 1
    elif on == "both":
        keep = torch.ones_like(labels, dtype=torch.bool)
    else:
        raise ValueError(f"unknown rec-loss selection {on!r}")
    per_sample = (f_gau - f).abs().flatten(1).sum(dim=1)
    weights = keep.to(per_sample.dtype)
    count = int(keep.sum())
    return (per_sample * weights).sum() / max(count, 1)
