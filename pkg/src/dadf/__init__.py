"""Joint face-forgery detection and localization on a frozen ViT encoder
fine-tuned with multiscale adapters and reconstruction guided attention."""

from dadf.adapter import AdapterConfig, MultiscaleAdapter, build_variant
from dadf.backbone import BackboneConfig, Encoder, freeze_report
from dadf.heads import ClassificationHead, MaskDecoder
from dadf.model import DADF, ModelConfig
from dadf.rga import RGA, RGAConfig

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "BackboneConfig",
    "ClassificationHead",
    "DADF",
    "Encoder",
    "MaskDecoder",
    "ModelConfig",
    "MultiscaleAdapter",
    "RGA",
    "RGAConfig",
    "build_variant",
    "freeze_report",
]
