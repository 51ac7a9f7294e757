"""Run configuration: strict JSON parsing, defaults, and hashing.

Sections: data, augment, model, loss, optim, pipeline, plus the top-level
seed. Unknown keys are rejected anywhere in the document, and every error
names the offending JSON path. The config hash is the sha256 hex digest of
the canonicalized raw document (sorted keys, tight separators), so a --seed
override changes artifacts' stamped seed but not their stamped hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .augment import AugmentConfig
from .errors import ConfigError
from .manifest import SPLITS
from .model import ModelConfig
from .synthdata import SynthSpec

MODES = ("cacon", "simclr-baseline")


def _mapping(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object, got {type(obj).__name__}")
    return obj


def _reject_unknown(raw: dict, known, path: str) -> None:
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")


def _as_int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _as_float(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _as_str(v, path: str) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _as_pair(v, path: str) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{path}: expected a pair [lo, hi], got {v!r}")
    return (_as_float(v[0], f"{path}[0]"), _as_float(v[1], f"{path}[1]"))


def _as_int_list(v, path: str) -> list:
    if not isinstance(v, list):
        raise ConfigError(f"{path}: expected a list of integers, got {v!r}")
    return [_as_int(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _as_split_list(v, path: str) -> list:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a non-empty list of splits, got {v!r}")
    out = []
    for i, x in enumerate(v):
        s = _as_str(x, f"{path}[{i}]")
        if s not in SPLITS:
            raise ConfigError(
                f"{path}[{i}]: split must be one of {list(SPLITS)}, got {s!r}"
            )
        out.append(s)
    return out


@dataclass
class DataConfig:
    dataset_dir: str = "data"
    pretrain_splits: list = field(default_factory=lambda: ["train", "finetune"])
    finetune_splits: list = field(default_factory=lambda: ["finetune"])
    test_splits: list = field(default_factory=lambda: ["test"])
    synth: SynthSpec = field(default_factory=SynthSpec)


@dataclass
class LossConfig:
    temperature: float = 0.3
    margin: float = 0.5

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(
                f"loss.temperature must be > 0, got {self.temperature}"
            )
        if self.margin < 0:
            raise ConfigError(f"loss.margin must be >= 0, got {self.margin}")


@dataclass
class PretrainOptim:
    base_lr: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3
    warmup_epochs: int = 2

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(
                f"optim.pretrain.base_lr must be > 0, got {self.base_lr}"
            )
        if not (0 <= self.momentum < 1):
            raise ConfigError(
                f"optim.pretrain.momentum must lie in [0, 1), got {self.momentum}"
            )
        if self.weight_decay < 0 or self.trust_coefficient <= 0:
            raise ConfigError(
                "optim.pretrain: weight_decay must be >= 0 and "
                f"trust_coefficient > 0, got {self.weight_decay}, "
                f"{self.trust_coefficient}"
            )
        if self.warmup_epochs < 0:
            raise ConfigError(
                f"optim.pretrain.warmup_epochs must be >= 0, "
                f"got {self.warmup_epochs}"
            )


@dataclass
class FinetuneOptim:
    lr: float = 0.2
    momentum: float = 0.9

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"optim.finetune.lr must be > 0, got {self.lr}")
        if not (0 <= self.momentum < 1):
            raise ConfigError(
                f"optim.finetune.momentum must lie in [0, 1), got {self.momentum}"
            )


@dataclass
class OptimConfig:
    pretrain: PretrainOptim = field(default_factory=PretrainOptim)
    finetune: FinetuneOptim = field(default_factory=FinetuneOptim)


@dataclass
class PipelineConfig:
    mode: str = "cacon"
    pretrain_epochs: int = 30
    finetune_epochs: int = 40
    pretrain_batch_size: int = 16
    finetune_batch_size: int = 64
    checkpoint_dir: str = "runs/pretrain/checkpoint"
    classifier_dir: str = "runs/finetune/classifier"
    loio_splits: list = field(default_factory=lambda: ["finetune", "test"])
    loio_max_folds: int = 128
    n_verification_pairs: int = 1000
    verification_folds: int = 10
    cross_metric: str = "1nn"
    cross_source_dir: Optional[str] = None
    cross_target_dir: Optional[str] = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(
                f"pipeline.mode must be one of {list(MODES)}, got {self.mode!r}"
            )
        for key in ("pretrain_epochs", "finetune_epochs"):
            if getattr(self, key) < 0:
                raise ConfigError(
                    f"pipeline.{key} must be >= 0, got {getattr(self, key)}"
                )
        for key in ("pretrain_batch_size", "finetune_batch_size"):
            if getattr(self, key) < 2:
                raise ConfigError(
                    f"pipeline.{key} must be >= 2, got {getattr(self, key)}"
                )
        if self.loio_max_folds < 1:
            raise ConfigError(
                f"pipeline.loio_max_folds must be >= 1, got {self.loio_max_folds}"
            )
        if self.n_verification_pairs < 2:
            raise ConfigError(
                f"pipeline.n_verification_pairs must be >= 2, "
                f"got {self.n_verification_pairs}"
            )
        if self.verification_folds < 2:
            raise ConfigError(
                f"pipeline.verification_folds must be >= 2, "
                f"got {self.verification_folds}"
            )
        if self.cross_metric not in ("1nn", "verification"):
            raise ConfigError(
                f"pipeline.cross_metric must be '1nn' or 'verification', "
                f"got {self.cross_metric!r}"
            )


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        self.data.synth.validate()
        self.augment.validate()
        self.model.validate()
        self.loss.validate()
        self.optim.pretrain.validate()
        self.optim.finetune.validate()
        self.pipeline.validate()


def _parse_synth(raw: dict) -> SynthSpec:
    path = "data.synth"
    spec = SynthSpec()
    fields = {
        "n_subjects": ("n_subjects", _as_int),
        "images_per_subject": ("images_per_subject", _as_int),
        "image_side": ("image_side", _as_int),
        "n_age_groups": ("n_age_groups", _as_int),
        "latent_dim": ("latent_dim", _as_int),
        "identity_scale": ("identity_scale", _as_float),
        "age_scale": ("age_scale", _as_float),
        "noise_std": ("noise_std", _as_float),
        "test_age_groups": ("test_age_groups", _as_int_list),
        "subject_id_offset": ("subject_id_offset", _as_int),
    }
    _reject_unknown(raw, fields, path)
    for key, (attr, conv) in fields.items():
        if key in raw:
            setattr(spec, attr, conv(raw[key], f"{path}.{key}"))
    return spec


def _parse_data(raw: dict) -> DataConfig:
    path = "data"
    _reject_unknown(raw, ("dataset_dir", "pretrain_splits", "finetune_splits",
                          "test_splits", "synth"), path)
    cfg = DataConfig()
    if "dataset_dir" in raw:
        cfg.dataset_dir = _as_str(raw["dataset_dir"], f"{path}.dataset_dir")
    for key in ("pretrain_splits", "finetune_splits", "test_splits"):
        if key in raw:
            setattr(cfg, key, _as_split_list(raw[key], f"{path}.{key}"))
    if "synth" in raw:
        cfg.synth = _parse_synth(_mapping(raw["synth"], f"{path}.synth"))
    return cfg


def _parse_augment(raw: dict) -> AugmentConfig:
    path = "augment"
    _reject_unknown(raw, ("crop_scale_range", "color_strength",
                          "blur_sigma_range", "blur_apply_prob",
                          "n_age_groups"), path)
    cfg = AugmentConfig()
    if "crop_scale_range" in raw:
        cfg.crop_scale_range = _as_pair(raw["crop_scale_range"],
                                        f"{path}.crop_scale_range")
    if "color_strength" in raw:
        cfg.color_strength = _as_float(raw["color_strength"],
                                       f"{path}.color_strength")
    if "blur_sigma_range" in raw:
        cfg.blur_sigma_range = _as_pair(raw["blur_sigma_range"],
                                        f"{path}.blur_sigma_range")
    if "blur_apply_prob" in raw:
        cfg.blur_apply_prob = _as_float(raw["blur_apply_prob"],
                                        f"{path}.blur_apply_prob")
    if "n_age_groups" in raw:
        cfg.n_age_groups = _as_int(raw["n_age_groups"], f"{path}.n_age_groups")
    return cfg


def _parse_model(raw: dict) -> ModelConfig:
    path = "model"
    _reject_unknown(raw, ("encoder_widths", "d_h", "d_z"), path)
    cfg = ModelConfig()
    if "encoder_widths" in raw:
        cfg.encoder_widths = _as_int_list(raw["encoder_widths"],
                                          f"{path}.encoder_widths")
    if "d_h" in raw:
        cfg.d_h = _as_int(raw["d_h"], f"{path}.d_h")
    if "d_z" in raw:
        cfg.d_z = _as_int(raw["d_z"], f"{path}.d_z")
    return cfg


def _parse_loss(raw: dict) -> LossConfig:
    path = "loss"
    _reject_unknown(raw, ("temperature", "margin"), path)
    cfg = LossConfig()
    if "temperature" in raw:
        cfg.temperature = _as_float(raw["temperature"], f"{path}.temperature")
    if "margin" in raw:
        cfg.margin = _as_float(raw["margin"], f"{path}.margin")
    return cfg


def _parse_optim(raw: dict) -> OptimConfig:
    path = "optim"
    _reject_unknown(raw, ("pretrain", "finetune"), path)
    cfg = OptimConfig()
    if "pretrain" in raw:
        sub = _mapping(raw["pretrain"], f"{path}.pretrain")
        keys = ("base_lr", "momentum", "weight_decay", "trust_coefficient",
                "warmup_epochs")
        _reject_unknown(sub, keys, f"{path}.pretrain")
        for key in keys:
            if key in sub:
                conv = _as_int if key == "warmup_epochs" else _as_float
                setattr(cfg.pretrain, key, conv(sub[key], f"{path}.pretrain.{key}"))
    if "finetune" in raw:
        sub = _mapping(raw["finetune"], f"{path}.finetune")
        _reject_unknown(sub, ("lr", "momentum"), f"{path}.finetune")
        for key in ("lr", "momentum"):
            if key in sub:
                setattr(cfg.finetune, key, _as_float(sub[key],
                                                     f"{path}.finetune.{key}"))
    return cfg


def _parse_pipeline(raw: dict) -> PipelineConfig:
    path = "pipeline"
    int_keys = ("pretrain_epochs", "finetune_epochs", "pretrain_batch_size",
                "finetune_batch_size", "loio_max_folds",
                "n_verification_pairs", "verification_folds")
    str_keys = ("mode", "checkpoint_dir", "classifier_dir", "cross_metric",
                "cross_source_dir", "cross_target_dir")
    _reject_unknown(raw, int_keys + str_keys + ("loio_splits",), path)
    cfg = PipelineConfig()
    for key in int_keys:
        if key in raw:
            setattr(cfg, key, _as_int(raw[key], f"{path}.{key}"))
    for key in str_keys:
        if key in raw:
            setattr(cfg, key, _as_str(raw[key], f"{path}.{key}"))
    if "loio_splits" in raw:
        cfg.loio_splits = _as_split_list(raw["loio_splits"], f"{path}.loio_splits")
    return cfg


def parse_config(doc) -> RunConfig:
    """Build a validated RunConfig from a parsed JSON document."""
    raw = _mapping(doc, "config")
    _reject_unknown(raw, ("seed", "data", "augment", "model", "loss",
                          "optim", "pipeline"), "config")
    cfg = RunConfig()
    if "seed" in raw:
        cfg.seed = _as_int(raw["seed"], "seed")
    if "data" in raw:
        cfg.data = _parse_data(_mapping(raw["data"], "data"))
    if "augment" in raw:
        cfg.augment = _parse_augment(_mapping(raw["augment"], "augment"))
    if "model" in raw:
        cfg.model = _parse_model(_mapping(raw["model"], "model"))
    if "loss" in raw:
        cfg.loss = _parse_loss(_mapping(raw["loss"], "loss"))
    if "optim" in raw:
        cfg.optim = _parse_optim(_mapping(raw["optim"], "optim"))
    if "pipeline" in raw:
        cfg.pipeline = _parse_pipeline(_mapping(raw["pipeline"], "pipeline"))
    cfg.validate()
    return cfg


def canonical_bytes(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode()


def config_hash(doc) -> str:
    """sha256 hex digest of the canonicalized raw config document."""
    return hashlib.sha256(canonical_bytes(doc)).hexdigest()


def load_config(path) -> tuple[RunConfig, str]:
    """Read, validate, and hash a config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return parse_config(doc), config_hash(doc)
