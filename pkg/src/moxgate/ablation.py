"""Sweeps over modality subsets, cross-attention head counts, extra blocks and fusion mode."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import AlignedDataset
from .metrics import MetricsReport
from .model import ConfigError, ModelConfig
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

AXES = ("modality_subsets", "cross_heads", "components", "fusion_mode")
PROTOCOL_AXES = ("modality_subsets", "cross_heads", "components")

COMPONENT_ARMS = {
    "batchnorm": ("w/ BatchNorm", {"use_batchnorm": True}),
    "skip": ("w/ Skip Connection", {"use_skip": True}),
    "feedforward": ("w/ Feedforward Attention", {"use_feedforward_attention": True}),
    "skip+feedforward": ("w/ Skip + Feedforward Attn", {"use_skip": True, "use_feedforward_attention": True}),
}
FUSION_LABELS = {"concat": "Concatenation", "cross_attention": "Cross-Attention"}
DISPLAY_NAMES = {"gene": "Gene", "methylation": "Methylation", "mirna": "miRNA"}
METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1")


@dataclass
class AblationSpec:
    axis: str
    values: list | None = None
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown ablation axis {self.axis!r}; choose from {AXES}")
        if self.values is not None and not self.values:
            raise ConfigError("ablation values must be nonempty")
        if not self.seeds:
            raise ConfigError("ablation needs at least one seed")


@dataclass
class AblationRow:
    axis: str
    label: str
    value: object
    reports: list[MetricsReport]

    def mean(self) -> dict[str, float]:
        return {k: float(np.mean([r.row()[k] for r in self.reports])) for k in METRIC_COLUMNS}


def modality_subsets(names: Sequence[str]) -> list[tuple[str, ...]]:
    """Every nonempty subset: singles first, then pairs, ..., then all."""
    out = []
    for size in range(1, len(names) + 1):
        out.extend(itertools.combinations(names, size))
    return out


def subset_label(subset: Sequence[str], all_names: Sequence[str]) -> str:
    if len(subset) == len(all_names) and len(all_names) > 1:
        return "All (Combined)"
    return " + ".join(DISPLAY_NAMES.get(n, n) for n in subset)


def default_values(axis: str, dataset: AlignedDataset) -> list:
    if axis == "modality_subsets":
        return [list(s) for s in modality_subsets(dataset.modality_names)]
    if axis == "cross_heads":
        return [8, 16, 32]
    if axis == "components":
        return list(COMPONENT_ARMS)
    return ["concat", "cross_attention"]


def _variant(axis: str, value, dataset: AlignedDataset, base: TrainConfig) -> tuple[str, AlignedDataset, TrainConfig]:
    model = dict(base.model)
    data = dataset
    if axis == "modality_subsets":
        subset = [value] if isinstance(value, str) else list(value)
        data = dataset.select_modalities(subset)
        label = subset_label(subset, dataset.modality_names)
    elif axis == "cross_heads":
        model["cross_heads"] = int(value)
        label = str(int(value))
    elif axis == "components":
        if value not in COMPONENT_ARMS:
            raise ConfigError(f"unknown component arm {value!r}; choose from {list(COMPONENT_ARMS)}")
        label, toggles = COMPONENT_ARMS[value]
        model.update({"use_batchnorm": False, "use_skip": False, "use_feedforward_attention": False}, **toggles)
    else:
        if value not in FUSION_LABELS:
            raise ConfigError(f"unknown fusion mode {value!r}")
        model["fusion_mode"] = value
        label = FUSION_LABELS[value]
    cfg = replace(base, model=model)
    cfg.model_config(data)  # validates before any training starts
    return label, data, cfg


def run_ablation(dataset: AlignedDataset, base: TrainConfig, spec: AblationSpec,
                 split: str | None = None) -> list[AblationRow]:
    """Train and evaluate one model per (value, seed); one row per value."""
    if split is None:
        split = "test" if dataset.mask("test").any() else "val"
    values = spec.values if spec.values is not None else default_values(spec.axis, dataset)
    variants = [(v, *_variant(spec.axis, v, dataset, base)) for v in values]
    rows = []
    for value, label, data, cfg in variants:
        reports = []
        for seed in spec.seeds:
            result = train(data, replace(cfg, seed=int(seed)))
            reports.append(evaluate(result.checkpoint, data, split))
            log.info("%s %s seed %d: acc %.3f", spec.axis, label, seed, reports[-1].accuracy)
        rows.append(AblationRow(spec.axis, label, value, reports))
    return rows


def write_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "row", *METRIC_COLUMNS, "seeds"])
        for row in rows:
            m = row.mean()
            w.writerow([row.axis, row.label, *(f"{m[k]:.4f}" for k in METRIC_COLUMNS), len(row.reports)])


def format_table(rows: Sequence[AblationRow]) -> str:
    headers = {"modality_subsets": "Modality", "cross_heads": "Heads", "components": "Ablation",
               "fusion_mode": "Fusion"}
    out = []
    for axis in dict.fromkeys(r.axis for r in rows):
        group = [r for r in rows if r.axis == axis]
        width = max(len(headers[axis]), *(len(r.label) for r in group))
        out.append(f"{headers[axis]:<{width}}  Accuracy  Precision  Recall  F1-Score")
        for r in group:
            m = r.mean()
            out.append(f"{r.label:<{width}}  {m['accuracy']:8.2f}  {m['precision']:9.2f}  {m['recall']:6.2f}  "
                       f"{m['f1']:8.2f}")
        out.append("")
    return "\n".join(out).rstrip() + "\n"
