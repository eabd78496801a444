"""Segmentation, classification and combined training objectives."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from dadf.backbone import ShapeMismatchError


@dataclass
class LossWeights:
    lambda1: float = 0.1  # reconstruction
    lambda2: float = 0.1  # classification

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


def _check_binary(t: Tensor, what: str) -> None:
    if not ((t == 0) | (t == 1)).all():
        raise ValueError(f"{what} must contain only 0 and 1")


def dice_loss(mask_logits: Tensor, gt_mask: Tensor, smooth: float = 1.0) -> Tensor:
    prob = torch.sigmoid(mask_logits).flatten(1)
    gt = gt_mask.flatten(1)
    inter = (prob * gt).sum(1)
    return (1 - (2 * inter + smooth) / (prob.sum(1) + gt.sum(1) + smooth)).mean()


def seg_loss(mask_logits: Tensor, gt_mask: Tensor, kind: str = "bce") -> Tensor:
    """Per-pixel BCE-with-logits averaged over pixels, then over the batch.
    ``kind="bce+dice"`` adds a soft Dice term."""
    if mask_logits.shape != gt_mask.shape:
        raise ShapeMismatchError(
            f"mask logits {tuple(mask_logits.shape)} and ground truth {tuple(gt_mask.shape)} differ"
        )
    _check_binary(gt_mask, "ground-truth mask")
    gt = gt_mask.to(mask_logits.dtype)
    per_pixel = F.binary_cross_entropy_with_logits(mask_logits, gt, reduction="none")
    loss = per_pixel.flatten(1).mean(1).mean()
    if kind == "bce":
        return loss
    if kind == "bce+dice":
        return loss + dice_loss(mask_logits, gt)
    raise ValueError(f"unknown segmentation loss {kind!r}")


def cls_loss(logits: Tensor, labels: Tensor) -> Tensor:
    _check_binary(labels, "labels")
    return F.binary_cross_entropy_with_logits(logits.reshape(-1), labels.reshape(-1).to(logits.dtype))


def overall_loss(seg: Tensor, rec: Tensor, cls: Tensor, weights: LossWeights = LossWeights()) -> Tensor:
    return seg + weights.lambda1 * rec + weights.lambda2 * cls
