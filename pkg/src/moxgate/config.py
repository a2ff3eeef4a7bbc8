"""JSON run configuration with sections data / model / loss / optimizer / train / ablation.

Every field has a default. Unknown keys are rejected. ``--set a.b=value``
overrides parse ``value`` as JSON when possible and as a plain string otherwise.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from .ablation import AblationSpec
from .ingest import PipelineConfig
from .model import ConfigError, ModelConfig
from .objective import FocalLossConfig, RegularizerConfig
from .synthetic import SyntheticSpec
from .training import OptimizerConfig, TrainConfig

_MODEL_DEFAULTS = {f.name: f.default for f in fields(ModelConfig) if f.name not in ("modality_input_dims", "num_classes")}
_SYNTH_DEFAULTS = SyntheticSpec().to_dict()

DEFAULTS: dict[str, dict[str, Any]] = {
    "data": {
        "dataset": None,
        "modalities": {},
        "labels": None,
        "orientation": "samples-in-rows",
        "delimiter": "\t",
        "max_missing_fraction": 0.4,
        "held_out_cohorts": [],
        "validation_fraction": 0.1,
        "split_seed": 0,
        "synthetic": _SYNTH_DEFAULTS,
    },
    "model": _MODEL_DEFAULTS,
    "loss": {"alpha": None, "gamma": 2.0, "lambda1": 1e-3, "lambda2": 1e-4},
    "optimizer": {f.name: f.default for f in fields(OptimizerConfig)},
    "train": {"batch_size": 32, "max_epochs": 200, "patience": 20, "seed": 0},
    "ablation": {"axis": "modality_subsets", "values": None, "seeds": [0]},
}

# values that are free-form mappings / lists rather than nested sections
_LEAF_MAPPINGS = {("data", "modalities")}


def _merge(base: dict, update: Mapping, path: tuple[str, ...]) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = ".".join((*path, key))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and (*path, key) not in _LEAF_MAPPINGS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, (*path, key))
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def overrides_to_dict(pairs: Sequence[str]) -> dict:
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override key {key!r} must name a section, e.g. model.embed_dim")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(raw)
    return out


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, Mapping):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user, ())
    if overrides:
        cfg = _merge(cfg, overrides_to_dict(overrides), ())
    return cfg


def train_config(cfg: Mapping) -> TrainConfig:
    loss, t = cfg["loss"], cfg["train"]
    return TrainConfig(
        batch_size=int(t["batch_size"]),
        max_epochs=int(t["max_epochs"]),
        patience=int(t["patience"]),
        seed=int(t["seed"]),
        model=dict(cfg["model"]),
        focal=FocalLossConfig(alpha=loss["alpha"], gamma=float(loss["gamma"])),
        reg=RegularizerConfig(float(loss["lambda1"]), float(loss["lambda2"])),
        optimizer=OptimizerConfig(**{k: float(v) for k, v in cfg["optimizer"].items()}),
    )


def synthetic_spec(cfg: Mapping) -> SyntheticSpec:
    return SyntheticSpec(**cfg["data"]["synthetic"])


def pipeline_config(cfg: Mapping) -> PipelineConfig:
    d = cfg["data"]
    if not d["modalities"] or not d["labels"]:
        raise ConfigError("preprocess needs data.modalities and data.labels")
    return PipelineConfig(
        modalities=d["modalities"],
        labels=d["labels"],
        orientation=d["orientation"],
        delimiter=d["delimiter"],
        max_missing_fraction=float(d["max_missing_fraction"]),
        held_out_cohorts=list(d["held_out_cohorts"]),
        validation_fraction=float(d["validation_fraction"]),
        seed=int(d["split_seed"]),
    )


def ablation_spec(cfg: Mapping) -> AblationSpec:
    a = cfg["ablation"]
    return AblationSpec(axis=a["axis"], values=a["values"], seeds=[int(s) for s in a["seeds"]])
