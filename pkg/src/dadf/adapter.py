"""Multiscale adapter and its ablation variants.

Each adapter maps a ``(B, H, W, C)`` token grid to a grid of the same shape::

    Sout' = concat(f(E_f(x)), g(E_g(x)), h(E_h(x)))
    Sout  = gate * M(Sout') + Conv_res(x)

where ``E_*`` are 1x1 entry convolutions, the branches are

    f: 1x1 -> 3x3 (dilation 1)
    g: 3x3 -> 3x3 (dilation 3)
    h: 5x5 -> 3x3 (dilation 5)

and ``M`` is a 1x1 merge convolution back to ``C`` channels. Every convolution
except the residual projection is followed by BatchNorm and ReLU. ``gate``
is a learnable scalar; ``gate_init=1`` gives the plain sum, the default 0
starts training from the frozen backbone's own behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
from torch import Tensor

from dadf.backbone import ShapeMismatchError
from dadf.gradcheck import check_gradients

VARIANTS = ("full", "b", "c", "d", "identity")

# (pre kernel, post dilation) per branch
BRANCHES = {"f": (1, 1), "g": (3, 3), "h": (5, 5)}
VARIANT_BRANCHES = {
    "full": ("f", "g", "h"),
    "b": ("f", "g", "h"),
    "c": ("f", "h"),
    "d": ("g", "h"),
    "identity": (),
}


@dataclass
class AdapterConfig:
    variant: str = "full"
    in_channels: int = 64
    mid_channels: int | None = None
    dilation_rates: tuple[int, ...] = field(default=(1, 3, 5))
    pre_kernels: tuple[int, ...] = field(default=(1, 3, 5))
    post_kernel: int = 3
    # learnable scale on the multiscale path; 0 makes a fresh adapter the identity map
    gate_init: float = 0.0

    def __post_init__(self) -> None:
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown adapter variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def mid(self) -> int:
        return self.mid_channels if self.mid_channels is not None else self.in_channels


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, dilation: int = 1):
        padding = dilation * (kernel - 1) // 2
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel, padding=padding, dilation=dilation, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=False),
        )


class Branch(nn.Module):
    def __init__(self, in_ch: int, mid: int, pre_kernel: int, post_kernel: int, dilation: int):
        super().__init__()
        self.entry = ConvBNReLU(in_ch, mid, 1)
        self.pre = ConvBNReLU(mid, mid, pre_kernel)
        self.post = ConvBNReLU(mid, mid, post_kernel, dilation=dilation)

    def forward(self, x: Tensor) -> Tensor:
        return self.post(self.pre(self.entry(x)))


class MultiscaleAdapter(nn.Module):
    def __init__(self, config: AdapterConfig):
        super().__init__()
        self.config = config
        c, mid = config.in_channels, config.mid
        names = VARIANT_BRANCHES[config.variant]
        self.branches = nn.ModuleDict()
        for name in names:
            idx = "fgh".index(name)
            dilation = 1 if config.variant == "b" else config.dilation_rates[idx]
            self.branches[name] = Branch(c, mid, config.pre_kernels[idx], config.post_kernel, dilation)
        if names:
            self.merge = ConvBNReLU(mid * len(names), c, 1)
            self.residual = nn.Conv2d(c, c, 1)
            self.gate = nn.Parameter(torch.tensor(float(config.gate_init)))
            with torch.no_grad():
                self.residual.weight.copy_(torch.eye(c).view(c, c, 1, 1))
                self.residual.bias.zero_()

    @property
    def is_identity(self) -> bool:
        return len(self.branches) == 0

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.config.in_channels:
            raise ShapeMismatchError(
                f"adapter expects {self.config.in_channels} channels, got {x.shape[-1]}"
            )
        if self.is_identity:
            return x
        z = x.permute(0, 3, 1, 2)
        merged = self.merge(torch.cat([branch(z) for branch in self.branches.values()], dim=1))
        return (self.gate * merged + self.residual(z)).permute(0, 2, 3, 1)


def build_variant(
    variant: str, in_channels: int, mid_channels: int | None = None, gate_init: float = 0.0
) -> MultiscaleAdapter:
    return MultiscaleAdapter(
        AdapterConfig(variant=variant, in_channels=in_channels, mid_channels=mid_channels, gate_init=gate_init)
    )


def adapter_forward(x_prime: Tensor, module: MultiscaleAdapter) -> Tensor:
    return module(x_prime)


def adapter_gradcheck(module: MultiscaleAdapter, probe: Tensor, eps: float = 1e-5) -> float:
    """Max relative error of input and parameter gradients of ``sum(module(probe))``
    against central differences. Runs on a float64 copy; ``module`` is untouched."""
    import copy

    mod = copy.deepcopy(module).double()
    x = probe.detach().double().clone().requires_grad_(True)
    params = [p for p in mod.parameters()]
    for p in params:
        p.requires_grad_(True)
    return check_gradients(lambda: mod(x).sum(), [x, *params], eps=eps)
