"""Command line entry point: ``moxgate <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import ablation as A
from . import config as C
from . import gradcheck
from .ingest import AlignedDataset, run_pipeline, write_manifest
from .metrics import MetricsReport
from .synthetic import generate_synthetic
from .training import Checkpoint, evaluate, train, write_log

log = logging.getLogger("moxgate")

DATASET_FILE = "dataset.mxd"
CHECKPOINT_FILE = "checkpoint.mxc"
DEFAULTS_NOTE = ("note: batch_size, max_epochs, patience, lambda1, lambda2 and best-validation-F1 model selection "
                 "are repository defaults")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> dict:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    return C.load_config(args.config, overrides)


def _dataset(args, cfg) -> AlignedDataset:
    path = args.dataset or cfg["data"]["dataset"]
    if not path:
        raise FileNotFoundError("no dataset given (use --dataset or data.dataset)")
    data = AlignedDataset.load(path)
    if args.modalities:
        data = data.select_modalities([m.strip() for m in args.modalities.split(",") if m.strip()])
    return data


def write_metrics(report: MetricsReport, class_names: Sequence[str], split: str, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "class", "precision", "recall", "f1", "support", "accuracy"])
        for i, name in enumerate(class_names):
            w.writerow([split, name, f"{report.precision[i]:.6f}", f"{report.recall[i]:.6f}", f"{report.f1[i]:.6f}",
                        int(report.support[i]), ""])
        w.writerow([split, "weighted", f"{report.weighted_precision:.6f}", f"{report.weighted_recall:.6f}",
                    f"{report.weighted_f1:.6f}", report.total, f"{report.accuracy:.6f}"])


def format_metrics(report: MetricsReport, class_names: Sequence[str], split: str) -> str:
    width = max(8, *(len(c) for c in class_names))
    lines = [f"{split} metrics ({report.total} samples)",
             f"{'class':<{width}}  precision  recall  f1-score  support"]
    for i, name in enumerate(class_names):
        lines.append(f"{name:<{width}}  {report.precision[i]:9.4f}  {report.recall[i]:6.4f}  {report.f1[i]:8.4f}  "
                     f"{int(report.support[i]):7d}")
    lines.append(f"{'weighted':<{width}}  {report.weighted_precision:9.4f}  {report.weighted_recall:6.4f}  "
                 f"{report.weighted_f1:8.4f}  {report.total:7d}")
    lines.append(f"accuracy {report.accuracy:.4f}")
    return "\n".join(lines)


def _eval_split(data: AlignedDataset, requested: str | None) -> str:
    if requested:
        return requested
    return "test" if data.mask("test").any() else "val"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    dataset, manifest = run_pipeline(C.pipeline_config(cfg))
    path = out / DATASET_FILE
    dataset.save(path)
    manifest["dataset_file"] = {"path": str(path), "sha256": _sha256(path)}
    write_manifest(manifest, out / "manifest.json")
    counts = {m: v["features_after_intersection"] for m, v in manifest["modalities"].items()}
    print(f"features after pipeline: {counts}")
    print(f"label encoding: {manifest['label_encoding']}")
    print(f"samples: {manifest['samples']}")
    print(f"wrote {path} and {out / 'manifest.json'}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg["data"]["synthetic"]["seed"] = args.seed
    spec = C.synthetic_spec(cfg)
    out = _out_dir(args)
    dataset = generate_synthetic(spec)
    path = out / DATASET_FILE
    dataset.save(path)
    manifest = {
        "synthetic_spec": spec.to_dict(),
        "dataset_file": {"path": str(path), "sha256": _sha256(path)},
        "features": dict(zip(dataset.modality_names, dataset.dims)),
        "label_encoding": {n: i for i, n in enumerate(dataset.class_names)},
        "samples": {s: int(dataset.mask(s).sum()) for s in ("train", "val", "test")},
    }
    write_manifest(manifest, out / "manifest.json")
    print(f"wrote {path}: {len(dataset.sample_ids)} samples, modalities {manifest['features']}, "
          f"splits {manifest['samples']}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = _dataset(args, cfg)
    out = _out_dir(args)
    tcfg = C.train_config(cfg)
    result = train(data, tcfg)
    result.checkpoint.save(out / CHECKPOINT_FILE)
    write_log(result.log, out / "train_log.csv")
    split = _eval_split(data, args.split)
    report = evaluate(result.checkpoint, data, split)
    write_metrics(report, data.class_names, split, out / "metrics.csv")
    last = result.log[-1]
    weights = {k[2:]: round(v, 4) for k, v in last.items() if k.startswith("w_")}
    print(f"trained {len(result.log)} epochs, best epoch {result.best_epoch} "
          f"(val f1 {result.log[result.best_epoch - 1]['val_f1']:.4f}); modality weights {weights}")
    print(format_metrics(report, data.class_names, split))
    print(DEFAULTS_NOTE)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    data = _dataset(args, cfg)
    ckpt = Checkpoint.load(args.checkpoint)
    split = _eval_split(data, args.split)
    report = evaluate(ckpt, data, split)
    if args.out:
        out = _out_dir(args)
        write_metrics(report, data.class_names, split, out / "metrics.csv")
        (out / "metrics.json").write_text(json.dumps(report.to_dict(data.class_names), indent=2) + "\n")
    print(format_metrics(report, data.class_names, split))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    data = _dataset(args, cfg)
    out = _out_dir(args)
    base = C.train_config(cfg)
    if args.axis == "all":
        specs = [A.AblationSpec(axis, None, cfg["ablation"]["seeds"]) for axis in A.PROTOCOL_AXES]
    else:
        if args.axis:
            cfg["ablation"]["axis"] = args.axis
        if args.values:
            cfg["ablation"]["values"] = [C._parse_value(v) for v in args.values.split(",")]
        specs = [C.ablation_spec(cfg)]
    rows = []
    for spec in specs:
        rows.extend(A.run_ablation(data, base, spec, args.split))
    A.write_csv(rows, out / "ablation.csv")
    table = A.format_table(rows)
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(DEFAULTS_NOTE)
    return 0


def cmd_gradcheck(args) -> int:
    ok, text = gradcheck.main_check(seed=args.seed or 0)
    print(text)
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moxgate", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True, out=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        p.add_argument("--seed", type=int, help="random seed")
        if out:
            p.add_argument("--out", default="runs/latest", help="output directory")
        if dataset:
            p.add_argument("--dataset", help="dataset file written by preprocess or synth")
            p.add_argument("--modalities", help="comma-separated modality subset, e.g. gene,methylation")
            p.add_argument("--split", choices=("train", "val", "test"), help="split to report on")
        return p

    common(sub.add_parser("preprocess", help="run the ingest pipeline and write a dataset + manifest"),
           dataset=False).set_defaults(func=cmd_preprocess)
    common(sub.add_parser("synth", help="generate a synthetic dataset"), dataset=False).set_defaults(func=cmd_synth)
    common(sub.add_parser("train", help="train a model")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("evaluate", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate, out=None)
    p = common(sub.add_parser("ablate", help="run an ablation sweep"))
    p.add_argument("--axis", choices=(*A.AXES, "all"), help="ablation axis; 'all' runs the three protocol tables")
    p.add_argument("--values", help="comma-separated values for the axis")
    p.set_defaults(func=cmd_ablate)
    common(sub.add_parser("gradcheck", help="finite-difference gradient suite"), dataset=False,
           out=False).set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, IndexError) as exc:
        print(f"moxgate {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
