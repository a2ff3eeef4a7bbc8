"""Mini-batch training with early stopping, evaluation and checkpoints."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .ingest import AlignedDataset
from .metrics import MetricsReport, metrics_report
from .model import ConfigError, ModelConfig, ModelParams, forward, init_params, predict_proba
from .objective import (
    FocalLossConfig,
    OptimizerState,
    RegularizerConfig,
    adamw_step,
    fusion_matrices,
    total_loss,
)
from .store import read_container, write_container
from .tensor import RngState

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "moxgate-checkpoint"


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    # batch size, epochs and patience are not given in the source material
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    model: dict = field(default_factory=dict)  # ModelConfig fields other than dims / classes
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        # patience >= max_epochs is accepted and simply disables early stopping
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    def model_config(self, dataset: AlignedDataset) -> ModelConfig:
        opts = dict(self.model)
        for key in ("modality_input_dims", "num_classes"):
            opts.pop(key, None)
        return ModelConfig(modality_input_dims=dataset.dims, num_classes=dataset.num_classes, **opts)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: ModelParams
    optimizer: OptimizerState
    rng_state: dict
    step: int
    epoch: int
    modality_names: list[str]
    class_names: list[str]

    def save(self, path: str | Path) -> None:
        header = {
            "kind": CHECKPOINT_KIND,
            "model_cfg": self.model_cfg.to_dict(),
            "optimizer": self.optimizer.hyper(),
            "rng_state": self.rng_state,
            "step": self.step,
            "epoch": self.epoch,
            "modality_names": self.modality_names,
            "class_names": self.class_names,
            "param_names": list(self.params.arrays),
            "buffer_names": list(self.params.buffers),
        }
        arrays = {}
        for k, v in self.params.arrays.items():
            arrays["param/" + k] = v
        for k, v in self.params.buffers.items():
            arrays["buffer/" + k] = v
        for k, v in self.optimizer.m.items():
            arrays["adam_m/" + k] = v
        for k, v in self.optimizer.v.items():
            arrays["adam_v/" + k] = v
        write_container(path, header, arrays)

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        header, arrays = read_container(path)
        if header.get("kind") != CHECKPOINT_KIND:
            raise ConfigError(f"{path}: not a checkpoint")
        params = ModelParams({k: arrays["param/" + k] for k in header["param_names"]},
                             {k: arrays["buffer/" + k] for k in header["buffer_names"]})
        hyper = header["optimizer"]
        opt = OptimizerState(**hyper,
                             m={k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")},
                             v={k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")})
        return cls(ModelConfig.from_dict(header["model_cfg"]), params, opt, header["rng_state"], header["step"],
                   header["epoch"], header["modality_names"], header["class_names"])


@dataclass
class TrainResult:
    checkpoint: Checkpoint  # best validation weighted F1
    final: Checkpoint
    log: list[dict]
    best_epoch: int


def _check_dims(cfg: ModelConfig, dataset: AlignedDataset) -> None:
    if cfg.modality_input_dims != dataset.dims or cfg.num_classes != dataset.num_classes:
        raise ConfigError(
            f"checkpoint expects dims {cfg.modality_input_dims} / {cfg.num_classes} classes, "
            f"dataset has {dataset.dims} / {dataset.num_classes}"
        )


def evaluate_arrays(params: ModelParams, cfg: ModelConfig, xs: Sequence[np.ndarray], y: np.ndarray,
                    batch_size: int = 256) -> MetricsReport:
    """Deterministic evaluation (dropout off, running batch-norm statistics)."""
    preds = []
    n = len(y)
    for start in range(0, n, batch_size):
        chunk = [x[start : start + batch_size] for x in xs]
        preds.append(predict_proba(params, cfg, chunk).argmax(axis=1))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return metrics_report(y, pred, cfg.num_classes)


def evaluate(checkpoint: Checkpoint, dataset: AlignedDataset, split: str = "test") -> MetricsReport:
    _check_dims(checkpoint.model_cfg, dataset)
    xs, y = dataset.part(split)
    if len(y) == 0:
        raise ConfigError(f"split {split!r} is empty")
    return evaluate_arrays(checkpoint.params, checkpoint.model_cfg, xs, y)


def loss_and_grads(params: ModelParams, cfg: ModelConfig, xs, y, train_cfg: TrainConfig, training: bool,
                   rng: RngState | None = None, update_buffers: bool = True):
    leaves = params.leaves()
    probs = forward(xs, leaves, cfg, training, rng, params.buffers if update_buffers else None)
    weights = T.softmax(leaves["fusion.logits"]) if "fusion.logits" in leaves else None
    terms = total_loss(probs, y, weights, fusion_matrices(leaves), train_cfg.focal, train_cfg.reg)
    T.backward(terms.total)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in leaves.items()}
    return terms, grads


def train(dataset: AlignedDataset, cfg: TrainConfig) -> TrainResult:
    xs_train, y_train = dataset.part("train")
    xs_val, y_val = dataset.part("val")
    if len(y_train) == 0 or len(y_val) == 0:
        raise ConfigError("training needs nonempty train and val splits")
    model_cfg = cfg.model_config(dataset)
    root = RngState(cfg.seed)
    params = init_params(model_cfg, root.spawn(0))
    shuffle_rng = root.spawn(1)
    dropout_rng = root.spawn(2)
    o = cfg.optimizer
    opt = OptimizerState(o.lr, o.weight_decay, o.beta1, o.beta2, o.eps)

    def snapshot(epoch):
        return Checkpoint(model_cfg, params.copy(), opt, {"shuffle": shuffle_rng.get_state(),
                                                          "dropout": dropout_rng.get_state()},
                          opt.step, epoch, list(dataset.modality_names), list(dataset.class_names))

    history: list[dict] = []
    best = snapshot(0)
    best_f1, best_epoch, stale = -1.0, 0, 0
    n = len(y_train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.generator.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            terms, grads = loss_and_grads(params, model_cfg, [x[idx] for x in xs_train], y_train[idx], cfg,
                                          True, dropout_rng)
            arrays, opt = adamw_step(params.arrays, grads, opt)
            params = ModelParams(arrays, params.buffers)
            sums += len(idx) * np.array([terms.total.item(), terms.focal, terms.balance, terms.frobenius])
        sums /= n
        train_rep = evaluate_arrays(params, model_cfg, xs_train, y_train)
        val_rep = evaluate_arrays(params, model_cfg, xs_val, y_val)
        row = {
            "epoch": epoch,
            "loss": sums[0],
            "focal": sums[1],
            "balance_penalty": sums[2],
            "frobenius_penalty": sums[3],
        }
        for name, w in zip(dataset.modality_names, params.modality_weights()):
            row[f"w_{name}"] = float(w)
        row.update({
            "train_accuracy": train_rep.accuracy,
            "val_accuracy": val_rep.accuracy,
            "val_precision": val_rep.weighted_precision,
            "val_recall": val_rep.weighted_recall,
            "val_f1": val_rep.weighted_f1,
        })
        history.append(row)
        log.debug("epoch %d loss %.5f val_f1 %.4f", epoch, row["loss"], row["val_f1"])
        if val_rep.weighted_f1 > best_f1:
            best_f1, best_epoch, stale = val_rep.weighted_f1, epoch, 0
            best = snapshot(epoch)
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best, snapshot(history[-1]["epoch"]), history, best_epoch)


def write_log(history: Sequence[dict], path: str | Path) -> None:
    if not history:
        raise ValueError("empty training log")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0]), lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
