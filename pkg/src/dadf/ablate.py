"""Ablation grid: component on/off, adapter variants, reconstruction-loss data."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from dadf.data import Sample
from dadf.train import evaluate, load_checkpoint, load_split, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Row:
    table: str
    name: str
    overrides: tuple[tuple[str, Any], ...]

    @property
    def key(self) -> tuple:
        return tuple(sorted(self.overrides))


def _row(table: str, name: str, **kw: Any) -> Row:
    return Row(table, name, tuple((k.replace("__", "."), v) for k, v in kw.items()))


ROWS = (
    # component grid
    _row("components", "baseline", adapter__variant="identity", rga__enabled=False),
    _row("components", "+adapter", adapter__variant="full", rga__enabled=False),
    _row("components", "+rga", adapter__variant="identity", rga__enabled=True, rga__rec_data="real"),
    _row("components", "+adapter+rga", adapter__variant="full", rga__enabled=True, rga__rec_data="real"),
    # adapter structure
    _row("adapter", "adapter-B", adapter__variant="b", rga__enabled=True, rga__rec_data="real"),
    _row("adapter", "adapter-C", adapter__variant="c", rga__enabled=True, rga__rec_data="real"),
    _row("adapter", "adapter-D", adapter__variant="d", rga__enabled=True, rga__rec_data="real"),
    _row("adapter", "adapter-full", adapter__variant="full", rga__enabled=True, rga__rec_data="real"),
    # reconstruction-loss data
    _row("rec_data", "real+fake", adapter__variant="full", rga__enabled=True, rga__rec_data="both"),
    _row("rec_data", "fake", adapter__variant="full", rga__enabled=True, rga__rec_data="fake"),
    _row("rec_data", "real", adapter__variant="full", rga__enabled=True, rga__rec_data="real"),
)

COLUMNS = ("table", "row", "adapter", "rga", "rec_data", "PBCA(%)", "IINC(%)", "ACC(%)", "AUC(%)")


def select_rows(spec: str) -> list[Row]:
    """``"all"`` or a comma list of table names and/or row names."""
    if spec.strip() == "all":
        return list(ROWS)
    wanted = {s.strip() for s in spec.split(",") if s.strip()}
    rows = [r for r in ROWS if r.table in wanted or r.name in wanted]
    unknown = wanted - {r.table for r in ROWS} - {r.name for r in ROWS}
    if unknown:
        raise ValueError(f"unknown ablation rows/tables: {sorted(unknown)}")
    return rows


def run_ablation(
    cfg: dict[str, Any],
    train_samples: list[Sample] | None = None,
    val_samples: list[Sample] | None = None,
    test_samples: list[Sample] | None = None,
) -> list[dict]:
    """Train and test every selected row on one dataset and seed.

    Rows with identical settings share a single run. Writes ``ablation.md``
    and ``ablation.json`` to ``<out_dir>/ablation``.
    """
    rows = select_rows(cfg["ablate.rows"])
    out_root = Path(cfg["out_dir"]) / "ablation"
    out_root.mkdir(parents=True, exist_ok=True)
    train_samples = train_samples if train_samples is not None else load_split(cfg, "train")
    val_samples = val_samples if val_samples is not None else load_split(cfg, "val")
    test_samples = test_samples if test_samples is not None else load_split(cfg, "test")
    epochs = cfg["ablate.epochs"] or cfg["train.epochs"]

    cache: dict[tuple, dict] = {}
    results = []
    for row in rows:
        if row.key not in cache:
            run_cfg = dict(cfg)
            run_cfg.update(dict(row.overrides))
            run_cfg["train.epochs"] = epochs
            run_cfg["out_dir"] = str(out_root / f"{row.table}_{row.name}".replace("+", "p"))
            logger.info("ablation run %s/%s", row.table, row.name)
            res = train(run_cfg, train_samples, val_samples)
            model, _ = load_checkpoint(res.best_checkpoint)
            rep = evaluate(model, test_samples, cfg["eval.batch_size"], cfg["eval.threshold"])
            cache[row.key] = {"report": rep.to_dict(), "run_dir": run_cfg["out_dir"]}
        settings = dict(row.overrides)
        rep = cache[row.key]["report"]
        results.append(
            {
                "table": row.table,
                "row": row.name,
                "adapter": settings["adapter.variant"],
                "rga": bool(settings["rga.enabled"]),
                "rec_data": settings.get("rga.rec_data", "-") if settings["rga.enabled"] else "-",
                "pbca": rep["pbca"],
                "iinc": rep["iinc"],
                "acc": rep["acc"],
                "auc": rep["auc"],
                "run_dir": cache[row.key]["run_dir"],
            }
        )
    (out_root / "ablation.json").write_text(json.dumps(results, indent=2) + "\n")
    (out_root / "ablation.md").write_text(format_table(results))
    return results


def _fmt(v: float | None, scale: float = 1.0) -> str:
    return "n/a" if v is None else f"{v * scale:.2f}"


def format_table(results: list[dict]) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for r in results:
        cells = [
            r["table"], r["row"], r["adapter"], "on" if r["rga"] else "off", r["rec_data"],
            _fmt(r["pbca"]), _fmt(r["iinc"], 100.0), _fmt(r["acc"]), _fmt(r["auc"]),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
