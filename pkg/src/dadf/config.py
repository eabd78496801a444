"""Flat, typed ``key = value`` configuration.

Every key has a default below, and its type is that default's type. Files may
contain ``#`` comments and blank lines; unknown keys are errors. Tuples are
written comma-separated (``decoder.channels = 32,16,16``), booleans as
``true/false/on/off``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable

from dadf.backbone import BackboneConfig
from dadf.losses import LossWeights
from dadf.model import ModelConfig
from dadf.rga import RGAConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out_dir": "runs/default",
    # manifests; data.dir/<split>.tsv is used for any left empty
    "data.dir": "",
    "data.train": "",
    "data.val": "",
    "data.test": "",
    "data.test_shifted": "",
    "backbone.patch_size": 8,
    "backbone.embed_dim": 64,
    "backbone.num_layers": 2,
    "backbone.num_heads": 4,
    "backbone.mlp_ratio": 4.0,
    "backbone.base_grid": 8,
    "backbone.seed": 0,
    "backbone.checkpoint": "",
    "backbone.adapter_position": "pre",
    "adapter.variant": "full",
    "adapter.mid_channels": 0,  # 0 means equal to backbone.embed_dim
    "rga.enabled": True,
    "rga.noise_variance": 1e-6,
    "rga.inference_noise": "on",
    "rga.seed": 1234,
    "rga.rec_data": "real",
    "decoder.stages": 3,
    "decoder.channels": (32, 16, 16),
    "cls.input": "penultimate",
    "cls.hidden": 32,
    "loss.lambda1": 0.1,
    "loss.lambda2": 0.1,
    "loss.seg": "bce",
    "train.batch_size": 4,
    "train.epochs": 30,
    "train.lr": 1e-3,
    "train.weight_decay": 0.01,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.min_lr": 0.0,
    "eval.batch_size": 25,
    "eval.threshold": 0.5,
    "ablate.epochs": 0,  # 0 means train.epochs
    "ablate.rows": "all",
}

CHOICES = {
    "backbone.adapter_position": ("pre", "post"),
    "adapter.variant": ("full", "b", "c", "d", "identity"),
    "rga.inference_noise": ("on", "off"),
    "rga.rec_data": ("real", "fake", "both"),
    "cls.input": ("penultimate", "mask"),
    "loss.seg": ("bce", "bce+dice"),
}

_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


class ConfigError(ValueError):
    pass


def parse_value(key: str, text: str) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(text)
            value: Any = low in _TRUE
        elif isinstance(default, int):
            value = int(text)
        elif isinstance(default, float):
            value = float(text)
        elif isinstance(default, tuple):
            value = tuple(int(v) for v in text.split(",") if v.strip())
        else:
            value = text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    if key in CHOICES and str(value).lower() not in CHOICES[key]:
        raise ConfigError(f"{key}: {value!r} not in {CHOICES[key]}")
    return value.lower() if key in CHOICES else value


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, text = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, text)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> dict[str, Any]:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(parse_lines(Path(path).read_text().splitlines(), str(path)))
    cfg.update(parse_lines(overrides, "--set"))
    return cfg


def dump_config(cfg: dict[str, Any]) -> str:
    return "\n".join(f"{k} = {format_value(cfg[k])}" for k in DEFAULTS) + "\n"


def manifest_path(cfg: dict[str, Any], split: str) -> Path | None:
    explicit = cfg[f"data.{split}"]
    if explicit:
        return Path(explicit)
    if cfg["data.dir"]:
        return Path(cfg["data.dir"]) / f"{split}.tsv"
    return None


def model_config(cfg: dict[str, Any]) -> ModelConfig:
    channels = tuple(cfg["decoder.channels"])
    stages = cfg["decoder.stages"]
    if len(channels) == 1:
        channels = channels * stages
    if len(channels) != stages:
        raise ConfigError(f"decoder.channels has {len(channels)} entries but decoder.stages = {stages}")
    return ModelConfig(
        backbone=BackboneConfig(
            patch_size=cfg["backbone.patch_size"],
            embed_dim=cfg["backbone.embed_dim"],
            num_layers=cfg["backbone.num_layers"],
            num_heads=cfg["backbone.num_heads"],
            mlp_ratio=cfg["backbone.mlp_ratio"],
            base_grid=cfg["backbone.base_grid"],
            adapter_position=cfg["backbone.adapter_position"],
            init_seed=cfg["backbone.seed"],
        ),
        adapter_variant=cfg["adapter.variant"],
        adapter_mid_channels=cfg["adapter.mid_channels"] or None,
        use_rga=cfg["rga.enabled"],
        rga=RGAConfig(
            noise_variance=cfg["rga.noise_variance"],
            inference_noise=cfg["rga.inference_noise"] == "on",
            seed=cfg["rga.seed"],
            rec_data=cfg["rga.rec_data"],
        ),
        decoder_channels=channels,
        cls_input=cfg["cls.input"],
        cls_hidden=cfg["cls.hidden"],
    )


def loss_weights(cfg: dict[str, Any]) -> LossWeights:
    return LossWeights(cfg["loss.lambda1"], cfg["loss.lambda2"])
