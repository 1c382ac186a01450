"""JSON run configuration with schema validation and explicit defaults."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .augment import AugmentConfig
from .selfonn import ModelConfig
from .synth import SynthConfig
from .train import ConfigError, TrainConfig

DATA_DIR_ENV = "SELFONN_ECG_DATA"

_num = {"type": "number"}
_posint = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data_dir": {"type": ["string", "null"]},
        "output_dir": {"type": ["string", "null"]},
        "nstdb_dir": {"type": ["string", "null"]},
        "seed": {"type": "integer"},
        "channel": {"type": "integer", "minimum": 0},
        "cv_folds": {"type": "integer", "minimum": 0},
        "split": {
            "oneOf": [
                {"type": "string"},
                {"type": "object", "additionalProperties": False, "required": ["train", "eval"],
                 "properties": {"train": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                                "eval": {"type": "array", "items": {"type": "string"}, "minItems": 1}}},
            ]
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "q_order": _posint, "in_channels": _posint,
                "channels": {"type": "array", "items": _posint, "minItems": 2, "maxItems": 2},
                "kernel": _posint, "pool": _posint, "temporal_dim": {"type": "integer", "minimum": 0},
                "hidden": _posint, "classes": _posint, "factorial_init": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "epochs": _posint, "batch_size": _posint,
                "base_lr": {"type": "number", "exclusiveMinimum": 0},
                "decay_factor": {"type": "number", "exclusiveMinimum": 0},
                "decay_every": _posint, "q_order": _posint, "seed": {"type": "integer"},
                "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "augment": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "snr_db_choices": {"type": "array", "items": _num, "minItems": 1},
                "copies_per_window": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "noise_mix": {"type": "array", "items": {"type": "number", "minimum": 0},
                              "minItems": 2, "maxItems": 2},
                "floor_fraction": {"type": "number", "minimum": 0},
                "enabled": {"type": "boolean"},
            },
        },
        "synth": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_records": {"type": "integer", "minimum": 2},
                "beats_per_record": {"type": "integer", "minimum": 5},
                "mix": {"type": "array", "items": {"type": "number", "minimum": 0},
                        "minItems": 3, "maxItems": 3},
                "eval_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "noise_mv": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
            },
        },
    },
}


@dataclass
class RunConfig:
    data_dir: str | None = None
    output_dir: str | None = None
    nstdb_dir: str | None = None
    seed: int = 0
    channel: int = 0
    cv_folds: int = 0
    split: object = "ds1-ds2"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self):
        d = asdict(self)
        d["model"]["channels"] = list(d["model"]["channels"])
        d["synth"]["mix"] = list(d["synth"]["mix"])
        return d

    def apply_seed(self, seed):
        """One seed drives training, augmentation and synthetic data."""
        self.seed = seed
        self.train.seed = seed
        self.augment.seed = seed
        self.synth.seed = seed


def _path_of(error):
    return "/".join(str(p) for p in error.absolute_path) or "<root>"


def validate(raw: dict):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config field {_path_of(exc)}: {exc.message}") from None


def from_dict(raw: dict, check_paths=True) -> RunConfig:
    validate(raw)
    try:
        cfg = RunConfig(
            **{k: v for k, v in raw.items() if k not in ("model", "train", "augment", "synth")},
            model=ModelConfig(**raw.get("model", {})),
            train=TrainConfig(**raw.get("train", {})),
            augment=AugmentConfig(**raw.get("augment", {})),
            synth=SynthConfig(**raw.get("synth", {})),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    # a top-level seed propagates unless a section pins its own
    if "seed" in raw:
        for section in ("train", "augment", "synth"):
            if "seed" not in raw.get(section, {}):
                getattr(cfg, section).seed = cfg.seed
    if "q_order" in raw.get("model", {}) and "q_order" not in raw.get("train", {}):
        cfg.train.q_order = cfg.model.q_order
    cfg.model.q_order = cfg.train.q_order
    if check_paths:
        for name in ("data_dir", "nstdb_dir"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"config field {name}: path does not exist: {value}")
    return cfg


def load(path=None, check_paths=True) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
    cfg = from_dict(raw, check_paths=check_paths)
    if cfg.data_dir is None and os.environ.get(DATA_DIR_ENV):
        cfg.data_dir = os.environ[DATA_DIR_ENV]
    return cfg
