"""Side-by-side localization panels: input | ground truth | prediction | attention."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from dadf.data import Sample
from dadf.model import DADF
from dadf.train import predict, to_tensors


def _gray(m: np.ndarray) -> np.ndarray:
    return np.repeat(m[..., None], 3, axis=-1)


def render_panels(model: DADF, samples: list[Sample], threshold: float = 0.5) -> list[np.ndarray]:
    """One ``(H, 4W, 3)`` uint8 panel per sample. The attention map is the
    channel mean of the RGA attention, min-max scaled per image and upsampled
    with nearest neighbour; it is black when RGA is disabled."""
    images, _, _ = to_tensors(samples)
    pred = predict(model, images)
    probs = pred["mask_probs"][:, 0].numpy()
    h, w = images.shape[-2:]
    if "attention" in pred:
        att = F.interpolate(pred["attention"].unsqueeze(1), size=(h, w), mode="nearest")[:, 0].numpy()
    else:
        att = np.zeros((len(samples), h, w), np.float32)
    panels = []
    for i, s in enumerate(samples):
        a = att[i]
        span = a.max() - a.min()
        a = (a - a.min()) / span if span > 0 else np.zeros_like(a)
        parts = [
            np.round(s.image * 255).astype(np.uint8),
            _gray(s.mask.astype(np.uint8) * 255),
            _gray((probs[i] >= threshold).astype(np.uint8) * 255),
            _gray(np.round(a * 255).astype(np.uint8)),
        ]
        panels.append(np.concatenate(parts, axis=1))
    return panels


def visualize(model: DADF, samples: list[Sample], out_dir: str | Path, threshold: float = 0.5) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    paths = []
    for i, panel in enumerate(render_panels(model, samples, threshold)):
        path = out / f"panel_{i:05d}.png"
        Image.fromarray(panel, "RGB").save(path)
        paths.append(path)
    return paths
