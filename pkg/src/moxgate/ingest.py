"""Omics matrix loading and the preprocessing pipeline.

Order of stages: drop sparse features -> median imputation -> feature
intersection across cohort files -> sample alignment -> split -> z-scoring
with train-only statistics.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .store import read_container, write_container

MISSING_TOKENS = {"", "na", "nan"}
SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class OmicsMatrix:
    modality: str
    sample_ids: list[str]
    feature_ids: list[str]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool)
        shape = (len(self.sample_ids), len(self.feature_ids))
        if self.values.shape != shape or self.missing.shape != shape:
            raise FormatError(f"{self.modality}: values {self.values.shape} do not match ids {shape}")
        for kind, ids in (("sample", self.sample_ids), ("feature", self.feature_ids)):
            dup = _first_duplicate(ids)
            if dup is not None:
                raise FormatError(f"{self.modality}: duplicate {kind} ID {dup!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select_features(self, keep: Sequence[str]) -> OmicsMatrix:
        pos = {f: i for i, f in enumerate(self.feature_ids)}
        idx = [pos[f] for f in keep]
        return OmicsMatrix(self.modality, list(self.sample_ids), list(keep), self.values[:, idx], self.missing[:, idx])


def _first_duplicate(ids: Iterable[str]) -> str | None:
    seen = set()
    for i in ids:
        if i in seen:
            return i
        seen.add(i)
    return None


def _parse_cell(cell: str) -> float | None:
    token = cell.strip()
    if token.lower() in MISSING_TOKENS:
        return None
    return float(token)


def load_matrix(path: str | Path, orientation: str = "samples-in-rows", modality: str | None = None,
                delimiter: str = "\t") -> OmicsMatrix:
    """Read a delimited matrix with one ID header row and one ID column.

    Empty cells and NA / NaN (any case) mark missing values.
    """
    if orientation not in ("samples-in-rows", "features-in-rows"):
        raise ValueError(f"unknown orientation {orientation!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    col_ids = [c.strip() for c in header[1:]]
    if len(rows) < 2 or not col_ids:
        raise FormatError(f"{path}: no data rows")
    row_ids: list[str] = []
    values = np.empty((len(rows) - 1, len(col_ids)))
    missing = np.zeros(values.shape, dtype=bool)
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise FormatError(f"{path}: line {r + 2} has {len(row)} fields, expected {len(header)}")
        row_ids.append(row[0].strip())
        for c, cell in enumerate(row[1:]):
            try:
                v = _parse_cell(cell)
            except ValueError:
                raise FormatError(f"{path}: line {r + 2}: cannot parse {cell!r}") from None
            if v is None:
                missing[r, c] = True
                values[r, c] = 0.0
            else:
                values[r, c] = v
    for kind, ids in (("row", row_ids), ("column", col_ids)):
        dup = _first_duplicate(ids)
        if dup is not None:
            raise FormatError(f"{path}: duplicate {kind} ID {dup!r}")
    if orientation == "features-in-rows":
        row_ids, col_ids = col_ids, row_ids
        values, missing = values.T.copy(), missing.T.copy()
    return OmicsMatrix(modality or path.stem, row_ids, col_ids, values, missing)


def drop_sparse_features(m: OmicsMatrix, max_missing_fraction: float = 0.4) -> OmicsMatrix:
    """Remove features whose missing fraction strictly exceeds the threshold."""
    if not 0.0 <= max_missing_fraction <= 1.0:
        raise ValueError("max_missing_fraction must lie in [0, 1]")
    n = m.shape[0]
    counts = m.missing.sum(axis=0)
    # relative slack absorbs rounding in threshold * n; the comparison stays strict
    keep = [f for f, c in zip(m.feature_ids, counts) if c <= max_missing_fraction * n + 1e-9 * n]
    return m.select_features(keep)


def impute_median(m: OmicsMatrix) -> OmicsMatrix:
    values = m.values.copy()
    for j, fid in enumerate(m.feature_ids):
        col_missing = m.missing[:, j]
        if not col_missing.any():
            continue
        observed = values[~col_missing, j]
        if observed.size == 0:
            raise DataError(f"{m.modality}: feature {fid!r} has no observed values")
        values[col_missing, j] = np.median(observed)
    return OmicsMatrix(m.modality, list(m.sample_ids), list(m.feature_ids), values, np.zeros_like(m.missing))


def intersect_features(matrices: Sequence[OmicsMatrix]) -> list[OmicsMatrix]:
    """Restrict every matrix to the shared features, in lexicographic order."""
    if not matrices:
        raise DataError("intersect_features needs at least one matrix")
    labels = {m.modality for m in matrices}
    if len(labels) > 1:
        raise DataError(f"intersect_features: mixed modalities {sorted(labels)}")
    common = set(matrices[0].feature_ids)
    for m in matrices[1:]:
        common &= set(m.feature_ids)
    if not common:
        raise DataError(f"{matrices[0].modality}: feature intersection is empty")
    order = sorted(common)
    return [m.select_features(order) for m in matrices]


# ---------------------------------------------------------------------------
# labels and splits
# ---------------------------------------------------------------------------


@dataclass
class LabelTable:
    sample_ids: list[str]
    cohort: list[str]
    subtype: list[str]
    class_names: list[str] = field(default_factory=list)
    class_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (len(self.sample_ids) == len(self.cohort) == len(self.subtype)):
            raise FormatError("label table columns have different lengths")
        dup = _first_duplicate(self.sample_ids)
        if dup is not None:
            raise FormatError(f"label table: duplicate sample ID {dup!r}")
        if not self.class_names:
            self.class_names = sorted(set(self.subtype))
        lookup = {c: i for i, c in enumerate(self.class_names)}
        try:
            self.class_index = np.array([lookup[s] for s in self.subtype], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"subtype {exc.args[0]!r} not in class list") from None

    def __len__(self) -> int:
        return len(self.sample_ids)

    def subset(self, ids: Sequence[str]) -> LabelTable:
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        idx = [pos[s] for s in ids]
        return LabelTable([self.sample_ids[i] for i in idx], [self.cohort[i] for i in idx],
                          [self.subtype[i] for i in idx], list(self.class_names))


def load_labels(path: str | Path, delimiter: str = "\t") -> LabelTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"labels file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        need = {"sample_id", "cohort", "subtype"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise FormatError(f"{path}: needs columns sample_id, cohort, subtype")
        ids, cohorts, subtypes = [], [], []
        for row in reader:
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            ids.append(row["sample_id"])
            cohorts.append(row["cohort"])
            subtypes.append(row["subtype"])
    if not ids:
        raise FormatError(f"{path}: no label rows")
    return LabelTable(ids, cohorts, subtypes)


@dataclass
class SplitSpec:
    held_out_cohorts: set[str] = field(default_factory=set)
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.held_out_cohorts = set(self.held_out_cohorts)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


def make_splits(labels: LabelTable, spec: SplitSpec) -> np.ndarray:
    """Tag each sample train / val / test.

    Held-out cohorts go to test. Within every class, round(fraction * n) of the
    remaining samples (at least one, leaving at least one for training) go to
    val, chosen by a seeded permutation.
    """
    n = len(labels)
    tags = np.full(n, "train", dtype=object)
    held = np.array([c in spec.held_out_cohorts for c in labels.cohort], dtype=bool)
    tags[held] = "test"
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    for k, name in enumerate(labels.class_names):
        idx = np.flatnonzero((labels.class_index == k) & ~held)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise DataError(f"class {name!r} has {idx.size} sample outside held-out cohorts; need at least 2")
        n_val = int(math.floor(spec.validation_fraction * idx.size + 0.5))
        n_val = min(max(n_val, 1), idx.size - 1)
        chosen = rng.permutation(idx)[:n_val]
        tags[chosen] = "val"
    return tags.astype(str)


# ---------------------------------------------------------------------------
# aligned dataset
# ---------------------------------------------------------------------------


@dataclass
class AlignedDataset:
    modality_names: list[str]
    arrays: list[np.ndarray]
    labels: np.ndarray
    split: np.ndarray
    sample_ids: list[str]
    class_names: list[str]
    cohorts: list[str] = field(default_factory=list)
    feature_ids: list[list[str]] = field(default_factory=list)
    standardization_stats: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split).astype(str)
        n = len(self.sample_ids)
        if len(self.arrays) != len(self.modality_names):
            raise DataError("one array per modality required")
        for name, a in zip(self.modality_names, self.arrays):
            if a.ndim != 2 or a.shape[0] != n:
                raise DataError(f"modality {name}: shape {a.shape} does not match {n} samples")
            if not np.all(np.isfinite(a)):
                raise DataError(f"modality {name}: non-finite values present")
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise DataError("labels and split must have one entry per sample")
        if not self.cohorts:
            self.cohorts = ["all"] * n
        if not self.feature_ids:
            self.feature_ids = [[f"f{j}" for j in range(a.shape[1])] for a in self.arrays]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dims(self) -> list[int]:
        return [a.shape[1] for a in self.arrays]

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return self.split == split

    def part(self, split: str) -> tuple[list[np.ndarray], np.ndarray]:
        mk = self.mask(split)
        return [a[mk] for a in self.arrays], self.labels[mk]

    def select_modalities(self, names: Sequence[str]) -> AlignedDataset:
        unknown = [n for n in names if n not in self.modality_names]
        if unknown:
            raise DataError(f"unknown modalities {unknown}; available {self.modality_names}")
        idx = [self.modality_names.index(n) for n in names]
        stats = [self.standardization_stats[i] for i in idx] if self.standardization_stats else []
        return AlignedDataset([self.modality_names[i] for i in idx], [self.arrays[i] for i in idx], self.labels,
                              self.split, self.sample_ids, self.class_names, self.cohorts,
                              [self.feature_ids[i] for i in idx], stats)

    # persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = {
            "kind": "aligned-dataset",
            "modality_names": self.modality_names,
            "sample_ids": self.sample_ids,
            "class_names": self.class_names,
            "cohorts": self.cohorts,
            "split": self.split.tolist(),
            "feature_ids": self.feature_ids,
            "standardized": bool(self.standardization_stats),
        }
        arrays = {"labels": self.labels}
        for i, a in enumerate(self.arrays):
            arrays[f"x{i}"] = a
        for i, (mu, sd) in enumerate(self.standardization_stats):
            arrays[f"mean{i}"] = mu
            arrays[f"std{i}"] = sd
        write_container(path, header, arrays)

    @classmethod
    def load(cls, path: str | Path) -> AlignedDataset:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        header, arrays = read_container(path)
        if header.get("kind") != "aligned-dataset":
            raise FormatError(f"{path}: not a dataset file")
        m = len(header["modality_names"])
        stats = [(arrays[f"mean{i}"], arrays[f"std{i}"]) for i in range(m)] if header["standardized"] else []
        return cls(header["modality_names"], [arrays[f"x{i}"] for i in range(m)], arrays["labels"],
                   np.array(header["split"]), header["sample_ids"], header["class_names"], header["cohorts"],
                   header["feature_ids"], stats)


def standardize(d: AlignedDataset, eps: float = 1e-12) -> AlignedDataset:
    """Z-score each feature with train-split mean and population std."""
    train = d.mask("train")
    if not train.any():
        raise DataError("standardize needs at least one train sample")
    arrays, stats = [], []
    for a in d.arrays:
        mu = a[train].mean(axis=0)
        sd = a[train].std(axis=0)
        flat = sd < eps
        safe = np.where(flat, 1.0, sd)
        z = (a - mu) / safe
        z[:, flat] = 0.0
        arrays.append(z)
        stats.append((mu, sd))
    return AlignedDataset(list(d.modality_names), arrays, d.labels, d.split, list(d.sample_ids), list(d.class_names),
                          list(d.cohorts), [list(f) for f in d.feature_ids], stats)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    modalities: dict[str, list[str]]
    labels: str
    orientation: str = "samples-in-rows"
    delimiter: str = "\t"
    max_missing_fraction: float = 0.4
    held_out_cohorts: list[str] = field(default_factory=list)
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.modalities = {k: [v] if isinstance(v, str) else list(v) for k, v in self.modalities.items()}
        if not self.modalities:
            raise DataError("no modalities configured")


def run_pipeline(cfg: PipelineConfig) -> tuple[AlignedDataset, dict]:
    """Run every preprocessing stage and return the dataset plus a manifest."""
    labels = load_labels(cfg.labels, cfg.delimiter)
    manifest: dict = {
        "labels_path": str(cfg.labels),
        "settings": {
            "orientation": cfg.orientation,
            "delimiter": cfg.delimiter,
            "max_missing_fraction": cfg.max_missing_fraction,
            "held_out_cohorts": sorted(cfg.held_out_cohorts),
            "validation_fraction": cfg.validation_fraction,
            "seed": cfg.seed,
            "stage_order": ["drop_sparse_features", "impute_median", "intersect_features", "align_samples",
                            "make_splits", "standardize"],
        },
        "modalities": {},
    }
    merged: list[OmicsMatrix] = []
    for name, paths in cfg.modalities.items():
        parts, files = [], []
        for p in paths:
            raw = load_matrix(p, cfg.orientation, modality=name, delimiter=cfg.delimiter)
            dropped = drop_sparse_features(raw, cfg.max_missing_fraction)
            imputed = impute_median(dropped)
            parts.append(imputed)
            files.append({"path": str(p), "samples": raw.shape[0], "features_raw": raw.shape[1],
                          "missing_cells": int(raw.missing.sum()), "features_after_drop": dropped.shape[1]})
        parts = intersect_features(parts)
        ids = [s for part in parts for s in part.sample_ids]
        dup = _first_duplicate(ids)
        if dup is not None:
            raise DataError(f"{name}: sample {dup!r} appears in more than one file")
        m = OmicsMatrix(name, ids, list(parts[0].feature_ids), np.vstack([q.values for q in parts]),
                        np.zeros((len(ids), len(parts[0].feature_ids)), dtype=bool))
        merged.append(m)
        manifest["modalities"][name] = {"files": files, "features_after_intersection": m.shape[1]}

    # samples present in every modality and in the label table, label-table order
    present = set(labels.sample_ids)
    for m in merged:
        present &= set(m.sample_ids)
    ids = [s for s in labels.sample_ids if s in present]
    if not ids:
        raise DataError("no sample appears in every modality and in the label table")
    table = labels.subset(ids)
    # re-encode on the retained samples so every class index is populated
    table = LabelTable(table.sample_ids, table.cohort, table.subtype)
    arrays = []
    for m in merged:
        pos = {s: i for i, s in enumerate(m.sample_ids)}
        arrays.append(m.values[[pos[s] for s in ids]])
    split = make_splits(table, SplitSpec(set(cfg.held_out_cohorts), cfg.validation_fraction, cfg.seed))
    dataset = AlignedDataset(list(cfg.modalities), arrays, table.class_index, split, ids, table.class_names,
                             table.cohort, [m.feature_ids for m in merged])
    dataset = standardize(dataset)
    manifest["samples"] = {
        "labelled": len(labels),
        "aligned": len(ids),
        "dropped_unaligned": len(labels) - len(ids),
        "train": int((split == "train").sum()),
        "val": int((split == "val").sum()),
        "test": int((split == "test").sum()),
    }
    manifest["label_encoding"] = {name: i for i, name in enumerate(table.class_names)}
    manifest["split_assignment"] = dict(zip(ids, split.tolist()))
    manifest["standardization"] = {
        name: {"mean": mu.tolist(), "std": sd.tolist()}
        for name, (mu, sd) in zip(dataset.modality_names, dataset.standardization_stats)
    }
    return dataset, manifest


def write_manifest(manifest: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
