"""Training, evaluation and checkpointing."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import Tensor
from torch.utils.data import DataLoader, TensorDataset

from dadf.backbone import frozen_fingerprint, freeze_report, load_backbone
from dadf.config import dump_config, loss_weights, manifest_path, model_config
from dadf.data import Sample, load_manifest, load_samples
from dadf.losses import cls_loss, overall_loss, seg_loss
from dadf.metrics import MetricsReport, summarize
from dadf.model import DADF
from dadf.rga import reconstruction_loss

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dadf-ckpt-1"


class DivergenceError(RuntimeError):
    pass


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def build_model(cfg: dict[str, Any]) -> DADF:
    """Frozen parts come from ``backbone.seed`` (or ``backbone.checkpoint``),
    trainable parts from ``seed``."""
    torch.manual_seed(cfg["seed"])
    model = DADF(model_config(cfg))
    if cfg["backbone.checkpoint"]:
        load_backbone(model.encoder, cfg["backbone.checkpoint"])
    return model


def to_tensors(samples: list[Sample]) -> tuple[Tensor, Tensor, Tensor]:
    images = torch.from_numpy(np.stack([s.image for s in samples])).permute(0, 3, 1, 2).contiguous()
    masks = torch.from_numpy(np.stack([s.mask for s in samples])).unsqueeze(1).float()
    labels = torch.tensor([s.label for s in samples], dtype=torch.float32)
    return images, masks, labels


def load_split(cfg: dict[str, Any], split: str) -> list[Sample]:
    path = manifest_path(cfg, split)
    if path is None:
        raise ValueError(f"no manifest configured for split {split!r} (set data.dir or data.{split})")
    manifest = load_manifest(path)
    manifest.validate()
    return load_samples(manifest)


def trainable_state(model: DADF) -> dict[str, Tensor]:
    """State-dict entries outside the frozen groups (includes BatchNorm buffers)."""
    frozen = {n for n, p in model.named_parameters() if not p.requires_grad}
    return {k: v.detach().clone() for k, v in model.state_dict().items() if k not in frozen}


def save_checkpoint(path: str | Path, model: DADF, cfg: dict[str, Any], epoch: int, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "trainable": trainable_state(model),
        "frozen_fingerprint": frozen_fingerprint(model),
        "config": dict(cfg),
        "epoch": epoch,
        "rng_state": {"torch": torch.get_rng_state(), "numpy": np.random.get_state(), "python": random.getstate()},
    }
    payload.update(extra or {})
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[DADF, dict]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    model = build_model(ckpt["config"])
    if frozen_fingerprint(model) != ckpt["frozen_fingerprint"]:
        raise ValueError(f"{path}: frozen backbone does not match the checkpoint fingerprint")
    missing, unexpected = model.load_state_dict(ckpt["trainable"], strict=False)
    frozen = {n for n, p in model.named_parameters() if not p.requires_grad}
    if unexpected or set(missing) - frozen:
        raise ValueError(f"{path}: state mismatch (missing={sorted(set(missing) - frozen)}, unexpected={unexpected})")
    model.eval()
    return model, ckpt


@torch.no_grad()
def predict(model: DADF, images: Tensor, batch_size: int = 25) -> dict[str, Tensor]:
    """Mask probabilities ``(N,1,H,W)``, classification logits ``(N,)`` and,
    with RGA, channel-averaged attention ``(N,Hp,Wp)``."""
    was_training = model.training
    model.eval()
    probs, logits, attn = [], [], []
    for start in range(0, len(images), batch_size):
        out = model(images[start : start + batch_size])
        probs.append(torch.sigmoid(out["mask_logits"]))
        logits.append(out["cls_logit"])
        if "attention" in out:
            attn.append(out["attention"].mean(-1))
    model.train(was_training)
    result = {"mask_probs": torch.cat(probs), "cls_logits": torch.cat(logits)}
    if attn:
        result["attention"] = torch.cat(attn)
    return result


def evaluate(model: DADF, samples: list[Sample], batch_size: int = 25, threshold: float = 0.5) -> MetricsReport:
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    images, masks, labels = to_tensors(samples)
    pred = predict(model, images, batch_size)
    probs = pred["mask_probs"][:, 0].numpy()
    gts = masks[:, 0].numpy()
    scores = pred["cls_logits"].numpy()
    labels_np = labels.numpy()
    overall = summarize(probs, gts, scores, labels_np, threshold)
    tags = np.array([str(s.domain_tag) for s in samples])
    per_domain = {}
    for tag in sorted(set(tags)):
        sel = tags == tag
        per_domain[str(tag)] = summarize(probs[sel], gts[sel], scores[sel], labels_np[sel], threshold)
    return MetricsReport(
        pbca=overall["pbca"],
        iinc=overall["iinc"],
        acc=overall["acc"],
        auc=overall["auc"],
        eer=overall["eer"],
        trainable_fraction=100.0 * freeze_report(model).fraction,
        n=overall["n"],
        per_domain=per_domain,
    )


@dataclass
class TrainResult:
    model: DADF
    best_checkpoint: Path
    last_checkpoint: Path
    history: list[dict] = field(default_factory=list)
    fingerprint_before: str = ""
    fingerprint_after: str = ""
    initial_state: dict[str, Tensor] = field(default_factory=dict)


def _cosine(step: int, total: int, lr: float, min_lr: float) -> float:
    return min_lr + (lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / max(total, 1)))


def train(
    cfg: dict[str, Any],
    train_samples: list[Sample] | None = None,
    val_samples: list[Sample] | None = None,
) -> TrainResult:
    """Fixed-epoch AdamW training with per-step cosine decay.

    Writes ``train.log`` (one line per epoch), ``metrics.jsonl``,
    ``config.cfg``, ``best.pt`` (highest val PBCA + ACC) and ``last.pt`` to
    ``cfg["out_dir"]``.
    """
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["train.batch_size"] < 1 or cfg["train.lr"] <= 0 or cfg["train.epochs"] < 1:
        raise ValueError("need train.batch_size >= 1, train.lr > 0 and train.epochs >= 1")
    seed_everything(cfg["seed"])
    if train_samples is None:
        train_samples = load_split(cfg, "train")
    if val_samples is None:
        val_samples = load_split(cfg, "val")

    model = build_model(cfg)
    (out_dir / "config.cfg").write_text(dump_config(cfg))
    weights = loss_weights(cfg)
    rec_on = model.config.rga.rec_data
    frozen_params = [p for p in model.parameters() if not p.requires_grad]
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(
        params,
        lr=cfg["train.lr"],
        betas=(cfg["train.beta1"], cfg["train.beta2"]),
        eps=cfg["train.eps"],
        weight_decay=cfg["train.weight_decay"],
    )
    images, masks, labels = to_tensors(train_samples)
    loader_gen = torch.Generator().manual_seed(cfg["seed"])
    noise_gen = torch.Generator().manual_seed(cfg["seed"] + 1)
    loader = DataLoader(
        TensorDataset(images, masks, labels), batch_size=cfg["train.batch_size"], shuffle=True, generator=loader_gen
    )
    total_steps = cfg["train.epochs"] * len(loader)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: _cosine(s, total_steps, cfg["train.lr"], cfg["train.min_lr"]) / cfg["train.lr"]
    )

    result = TrainResult(
        model=model,
        best_checkpoint=out_dir / "best.pt",
        last_checkpoint=out_dir / "last.pt",
        fingerprint_before=frozen_fingerprint(model),
        initial_state={n: p.detach().clone() for n, p in model.named_parameters()},
    )
    best_score = -math.inf
    log_path, jsonl_path = out_dir / "train.log", out_dir / "metrics.jsonl"
    for epoch in range(1, cfg["train.epochs"] + 1):
        model.train()
        t0 = time.perf_counter()
        sums = {"seg": 0.0, "rec": 0.0, "cls": 0.0, "overall": 0.0}
        for x, m, y in loader:
            out = model(x, generator=noise_gen)
            l_seg = seg_loss(out["mask_logits"], m, cfg["loss.seg"])
            l_cls = cls_loss(out["cls_logit"], y)
            if "features_gau" in out:
                l_rec = reconstruction_loss(out["features"], out["features_gau"], y, on=rec_on)
            else:
                l_rec = torch.zeros(())
            loss = overall_loss(l_seg, l_rec, l_cls, weights)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}: {loss.item()}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()
            for k, v in (("seg", l_seg), ("rec", l_rec), ("cls", l_cls), ("overall", loss)):
                sums[k] += v.item()

        if any(p.grad is not None for p in frozen_params):
            raise RuntimeError("a frozen parameter received a gradient")
        if frozen_fingerprint(model) != result.fingerprint_before:
            raise RuntimeError("frozen backbone parameters changed during training")

        val = evaluate(model, val_samples, cfg["eval.batch_size"], cfg["eval.threshold"])
        record = {"epoch": epoch, **{k: v / len(loader) for k, v in sums.items()}}
        record.update(val_pbca=val.pbca, val_iinc=val.iinc, val_acc=val.acc, lr=scheduler.get_last_lr()[0])
        result.history.append(record)
        with open(log_path, "a") as fh:
            fh.write(
                "epoch={epoch} seg={seg:.6f} rec={rec:.6f} cls={cls:.6f} overall={overall:.6f} "
                "val_pbca={val_pbca:.4f} val_iinc={val_iinc:.4f} val_acc={val_acc:.2f} lr={lr:.3e}\n".format(**record)
            )
        with open(jsonl_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        logger.info(
            "epoch %d/%d overall=%.4f val_pbca=%.2f val_acc=%.1f (%.1fs)",
            epoch, cfg["train.epochs"], record["overall"], val.pbca, val.acc, time.perf_counter() - t0,
        )
        score = val.pbca + val.acc
        if score > best_score:
            best_score = score
            save_checkpoint(result.best_checkpoint, model, cfg, epoch)
        save_checkpoint(result.last_checkpoint, model, cfg, epoch)

    result.fingerprint_after = frozen_fingerprint(model)
    return result
