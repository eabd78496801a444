"""End-to-end detector: adapted frozen encoder, RGA, mask decoder, classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
from torch import Tensor

from dadf.adapter import AdapterConfig, MultiscaleAdapter
from dadf.backbone import BackboneConfig, Encoder
from dadf.heads import ClassificationHead, MaskDecoder
from dadf.rga import RGA, RGAConfig, add_white_noise, feature_difference


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adapter_variant: str = "full"
    adapter_mid_channels: int | None = None
    use_rga: bool = True
    rga: RGAConfig = field(default_factory=RGAConfig)
    decoder_channels: tuple[int, ...] = (32, 16, 16)
    cls_input: str = "penultimate"
    cls_hidden: int = 32

    def __post_init__(self) -> None:
        if self.cls_input not in ("penultimate", "mask"):
            raise ValueError(f"cls_input must be 'penultimate' or 'mask', got {self.cls_input!r}")


class DADF(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        bb = config.backbone
        adapters = [
            MultiscaleAdapter(
                AdapterConfig(
                    variant=config.adapter_variant,
                    in_channels=bb.embed_dim,
                    mid_channels=config.adapter_mid_channels,
                )
            )
            for _ in range(bb.num_layers)
        ]
        self.encoder = Encoder(bb, adapters)
        self.rga = RGA(bb.out_dim) if config.use_rga else None
        self.decoder = MaskDecoder(bb.out_dim, config.decoder_channels)
        cls_in = self.decoder.out_channels if config.cls_input == "penultimate" else 1
        self.cls = ClassificationHead(cls_in, config.cls_hidden)

    def forward(self, x: Tensor, generator: torch.Generator | None = None) -> dict[str, Tensor]:
        """Returns ``mask_logits (B,1,H,W)``, ``cls_logit (B,)``, ``features`` and,
        with RGA enabled, ``features_gau`` and ``attention`` (all ``(B,Hp,Wp,C)``).

        Outside training the noisy pass uses a generator seeded from
        ``rga.seed`` unless one is passed, or is skipped (``S = 0``) when
        ``rga.inference_noise`` is off.
        """
        rga_cfg = self.config.rga
        out: dict[str, Tensor] = {}
        f = self.encoder(x)
        out["features"] = f
        if self.rga is not None:
            if self.training or rga_cfg.inference_noise:
                if generator is None and not self.training:
                    generator = torch.Generator().manual_seed(rga_cfg.seed)
                x_gau = add_white_noise(x, rga_cfg.noise_variance, rga_cfg.noise_mean, generator)
                f_gau = self.encoder(x_gau)
            else:
                f_gau = f.detach()
            out["features_gau"] = f_gau
            f, out["attention"] = self.rga(f, feature_difference(f, f_gau))
        mask_logits, penultimate = self.decoder(f, out_size=tuple(x.shape[-2:]))
        out["mask_logits"] = mask_logits
        out["cls_logit"] = self.cls(penultimate if self.config.cls_input == "penultimate" else mask_logits)
        return out
