"""Localization (PBCA, IINC) and detection (ACC, AUC, EER) metrics.

All functions take numpy-compatible arrays. Percent-valued metrics are in
[0, 100]; IINC is unitless in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dadf.backbone import ShapeMismatchError

REPORT_FIELDS = ("pbca", "iinc", "acc", "auc", "eer", "trainable_fraction")


class UndefinedMetricError(ValueError):
    """AUC/EER requested for scores from a single class."""


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def pbca(pred_mask, gt_mask, threshold: float = 0.5) -> float:
    """Percentage of pixels where ``pred >= threshold`` agrees with the binary ground truth."""
    pred, gt = np.asarray(pred_mask), np.asarray(gt_mask)
    _same_shape(pred, gt)
    hits = int(np.count_nonzero((pred >= threshold) == (gt > 0.5)))
    return 100.0 * hits / pred.size


def iinc(pred_binary, gt_binary) -> float:
    """Inverse intersection non-containment.

    0 when both masks are empty, 1 when exactly one is, otherwise
    ``1 - (|P&G|/|P| + |P&G|/|G|) / 2``.
    """
    p, g = np.asarray(pred_binary) > 0.5, np.asarray(gt_binary) > 0.5
    _same_shape(p, g)
    np_, ng = int(p.sum()), int(g.sum())
    if np_ == 0 and ng == 0:
        return 0.0
    if np_ == 0 or ng == 0:
        return 1.0
    inter = int((p & g).sum())
    return 1.0 - 0.5 * (inter / np_ + inter / ng)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC vertices ``(fpr, tpr)`` from the highest threshold down; tied scores
    share one vertex so the trapezoid gives them half credit."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = np.cumsum(~y)[distinct]
    pos, neg = int(y.sum()), int((~y).sum())
    tpr = np.r_[0.0, tps / pos]
    fpr = np.r_[0.0, fps / neg]
    return fpr, tpr


def auc(scores, labels) -> float:
    y = np.asarray(labels).ravel().astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("AUC needs both classes present")
    fpr, tpr = roc_curve(scores, labels)
    return 100.0 * float(np.trapezoid(tpr, fpr))


def eer(scores, labels) -> float:
    """Equal error rate: where FPR = 1 - TPR, interpolated linearly along the ROC."""
    y = np.asarray(labels).ravel().astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("EER needs both classes present")
    fpr, tpr = roc_curve(scores, labels)
    fnr = 1.0 - tpr
    diff = fpr - fnr  # increases from -1 to +1 along the curve
    idx = int(np.argmax(diff >= 0))
    if diff[idx] == 0 or idx == 0:
        return 100.0 * float(fpr[idx])
    d0, d1 = diff[idx - 1], diff[idx]
    t = -d0 / (d1 - d0)
    return 100.0 * float(fpr[idx - 1] + t * (fpr[idx] - fpr[idx - 1]))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """ACC in percent with ``sigmoid(score) >= threshold`` predicting fake."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.size == 0:
        raise ValueError("accuracy of an empty score list")
    hits = int(np.count_nonzero((sigmoid(s) >= threshold) == y))
    return 100.0 * hits / s.size


def detection_metrics(scores, labels) -> tuple[float, float, float]:
    """``(acc, auc, eer)``; raises :class:`UndefinedMetricError` for single-class input."""
    return accuracy(scores, labels), auc(scores, labels), eer(scores, labels)


@dataclass
class MetricsReport:
    pbca: float
    iinc: float
    acc: float
    auc: float | None
    eer: float | None
    trainable_fraction: float
    n: int = 0
    per_domain: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def write(self, stem: str | Path) -> tuple[Path, Path]:
        """Write ``<stem>.json`` and a flat ``<stem>.txt`` of ``key = value`` lines."""
        stem = Path(stem)
        json_path, txt_path = stem.with_suffix(".json"), stem.with_suffix(".txt")
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        lines = [f"{k} = {getattr(self, k)!r}" for k in REPORT_FIELDS]
        lines.append(f"n = {self.n}")
        for tag, sub in sorted(self.per_domain.items()):
            lines.extend(f"{tag}.{k} = {sub[k]!r}" for k in sub)
        txt_path.write_text("\n".join(lines) + "\n")
        return json_path, txt_path

    @classmethod
    def read(cls, path: str | Path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def summarize(pred_probs, gt_masks, scores, labels, threshold: float = 0.5) -> dict:
    """Dataset-level metrics: PBCA pooled over all pixels, IINC averaged per image."""
    pred = np.asarray(pred_probs)
    gt = np.asarray(gt_masks)
    _same_shape(pred, gt)
    binary = pred >= threshold
    out = {
        "pbca": pbca(pred, gt, threshold),
        "iinc": float(np.mean([iinc(b, g) for b, g in zip(binary, gt)])),
        "acc": accuracy(scores, labels),
        "n": int(len(labels)),
    }
    try:
        out["auc"], out["eer"] = auc(scores, labels), eer(scores, labels)
    except UndefinedMetricError:
        out["auc"] = out["eer"] = None
    return out
