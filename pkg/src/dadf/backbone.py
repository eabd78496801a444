"""Frozen ViT encoder with per-layer adapter slots and a learnable task head.

Token grids are kept channels-last, ``(B, Hp, Wp, C)``, so spatial adapters
never need to guess how a flat token sequence folds back into a grid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

FROZEN_GROUPS = ("encoder.patch_embed", "encoder.blocks")


class ShapeMismatchError(ValueError):
    """Raised when tensor dimensions violate an operation's contract."""


@dataclass
class BackboneConfig:
    patch_size: int = 8
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0
    # grid size the positional embedding is allocated for; other sizes interpolate
    base_grid: int = 8
    task_dim: int | None = None
    adapter_position: str = "pre"
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim={self.embed_dim} is not divisible by num_heads={self.num_heads}"
            )
        if self.adapter_position not in ("pre", "post"):
            raise ValueError(f"adapter_position must be 'pre' or 'post', got {self.adapter_position!r}")

    @property
    def out_dim(self) -> int:
        return self.task_dim if self.task_dim is not None else self.embed_dim


class PatchEmbed(nn.Module):
    """Non-overlapping patch projection plus a learnable positional term."""

    def __init__(self, patch_size: int, embed_dim: int, base_grid: int, in_chans: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_chans, embed_dim, kernel_size=patch_size, stride=patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, base_grid, base_grid, embed_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        p = self.patch_size
        if h % p or w % p:
            raise ShapeMismatchError(f"image size {h}x{w} is not divisible by patch size {p}")
        tokens = self.proj(x).permute(0, 2, 3, 1)
        gh, gw = tokens.shape[1:3]
        pos = self.pos_embed
        if pos.shape[1:3] != (gh, gw):
            pos = F.interpolate(
                pos.permute(0, 3, 1, 2), size=(gh, gw), mode="bilinear", align_corners=False
            ).permute(0, 2, 3, 1)
        return tokens + pos


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        n = h * w
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, h, w, c)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm transformer layer operating on a ``(B, H, W, C)`` grid."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TaskHead(nn.Module):
    """Per-token linear map from encoder width to task feature width."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, tokens: Tensor) -> Tensor:
        if not torch.isfinite(tokens).all():
            raise ValueError("task head received non-finite tokens")
        return self.linear(tokens)


class Encoder(nn.Module):
    """Patch embedding, N frozen transformer layers each preceded by an adapter,
    and a learnable task head.

    With ``adapter_position="post"`` each adapter wraps the layer output instead.
    The frozen parts are initialised from ``config.init_seed`` independently of
    the global RNG so that every model built from the same config shares one
    backbone.
    """

    def __init__(self, config: BackboneConfig, adapters: Sequence[nn.Module]):
        super().__init__()
        if len(adapters) != config.num_layers:
            raise ValueError(
                f"expected {config.num_layers} adapters (one per layer), got {len(adapters)}"
            )
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.init_seed)
            self.patch_embed = PatchEmbed(config.patch_size, config.embed_dim, config.base_grid)
            self.blocks = nn.ModuleList(
                Block(config.embed_dim, config.num_heads, config.mlp_ratio)
                for _ in range(config.num_layers)
            )
        self.adapters = nn.ModuleList(adapters)
        self.task_head = TaskHead(config.embed_dim, config.out_dim)
        self.freeze()

    def freeze(self) -> None:
        for module in (self.patch_embed, self.blocks):
            for p in module.parameters():
                p.requires_grad_(False)

    def tokens(self, x: Tensor) -> Tensor:
        """Token grid after the last transformer layer, before the task head."""
        z = self.patch_embed(x)
        for adapter, block in zip(self.adapters, self.blocks):
            if self.config.adapter_position == "pre":
                z = block(adapter(z))
            else:
                z = adapter(block(z))
        return z

    def forward(self, x: Tensor) -> Tensor:
        return self.task_head(self.tokens(x))


def patch_embed(image: Tensor, encoder: Encoder) -> Tensor:
    return encoder.patch_embed(image)


def encode(image: Tensor, encoder: Encoder) -> Tensor:
    return encoder(image)


class FreezeReport(NamedTuple):
    frozen: int
    trainable: int
    fraction: float


def param_group(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "encoder" and len(parts) > 1:
        return ".".join(parts[:2])
    return parts[0]


def group_counts(model: nn.Module) -> dict[str, tuple[int, int]]:
    """``{group: (frozen, trainable)}`` parameter counts."""
    counts: dict[str, list[int]] = {}
    for name, p in model.named_parameters():
        slot = counts.setdefault(param_group(name), [0, 0])
        slot[1 if p.requires_grad else 0] += p.numel()
    return {k: (v[0], v[1]) for k, v in counts.items()}


def freeze_report(model: nn.Module) -> FreezeReport:
    frozen = sum(p.numel() for p in model.parameters() if not p.requires_grad)
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    total = frozen + trainable
    return FreezeReport(frozen, trainable, trainable / total if total else 0.0)


def frozen_fingerprint(model: nn.Module) -> str:
    """SHA-256 over names, shapes and raw bytes of every frozen parameter."""
    digest = hashlib.sha256()
    for name, p in model.named_parameters():
        if p.requires_grad:
            continue
        arr = p.detach().cpu().contiguous().numpy()
        digest.update(name.encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


# Backbone checkpoint format (.npz):
#   one entry per parameter name holding the flattened values as float32,
#   plus "__meta__": a JSON string {"format": "dadf-backbone-1",
#   "shapes": {name: [dims...]}}.
BACKBONE_FORMAT = "dadf-backbone-1"


def save_backbone(encoder: Encoder, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    shapes: dict[str, list[int]] = {}
    for prefix, module in (("patch_embed", encoder.patch_embed), ("blocks", encoder.blocks)):
        for name, p in module.named_parameters():
            key = f"{prefix}.{name}"
            arrays[key] = p.detach().cpu().numpy().astype(np.float32).ravel()
            shapes[key] = list(p.shape)
    meta = json.dumps({"format": BACKBONE_FORMAT, "shapes": shapes}, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **arrays)


def load_backbone(encoder: Encoder, path: str | Path) -> None:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != BACKBONE_FORMAT:
            raise ValueError(f"{path}: unknown backbone checkpoint format {meta.get('format')!r}")
        targets = {
            **{f"patch_embed.{n}": p for n, p in encoder.patch_embed.named_parameters()},
            **{f"blocks.{n}": p for n, p in encoder.blocks.named_parameters()},
        }
        missing = set(targets) - set(meta["shapes"])
        if missing:
            raise ValueError(f"{path}: missing parameters {sorted(missing)}")
        with torch.no_grad():
            for key, p in targets.items():
                shape = tuple(meta["shapes"][key])
                if shape != tuple(p.shape):
                    raise ShapeMismatchError(f"{key}: checkpoint shape {shape} != model shape {tuple(p.shape)}")
                p.copy_(torch.from_numpy(data[key].reshape(shape)).to(p.dtype))
