"""Command-line entry point: ``mdfnet <command> [options]``.

Commands
    generate          synthetic dataset (tables, images, manifest)
    join              tables -> manifest.jsonl + exclusions.csv
    train             train one model, report on its validation split
    evaluate          score a checkpoint (or a detections CSV) on a split
    ablate-fusion     one row per fusion method, shared seed
    ablate-features   one row per clinical feature subset, shared seed
    report            collect report JSON files into one table
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .backbone import FusionMethod
from .data import SchemaError, SynthConfig, join, load_dataset, read_tables, synth_generate, write_dataset
from .data.join import write_exclusions, write_manifest
from .metrics import DEFAULT_SWEEP, EvalReport, evaluate, read_detections
from .model import Mode
from .structures import CLASS_NAMES
from .tensor.checkpoint import CheckpointError
from .training import (TrainConfig, TrainingDiverged, evaluate_model, ground_truth, load_checkpoint, predict,
                       split_train_val, train)

log = logging.getLogger("mdfnet")

FEATURE_ABLATION = (("gender", "heartrate"), ("gender", "resprate"), ("gender", "temperature"))


class UsageError(ValueError):
    pass


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file {p} does not exist")
    with open(p, encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return d


def _features(text: Optional[str]):
    if text is None:
        return None
    feats = tuple(f.strip() for f in text.split(",") if f.strip())
    if not feats:
        raise UsageError("--features needs at least one feature name")
    return feats


def train_config(args) -> TrainConfig:
    """TrainConfig from ``--config`` (if any) with command-line flags on top."""
    d = _read_json(args.config) if args.config else {}
    model = dict(d.get("model", {}))
    if getattr(args, "mode", None):
        model["mode"] = args.mode
    if getattr(args, "fusion", None):
        model["fusion"] = args.fusion
    feats = _features(getattr(args, "features", None))
    if feats is not None:
        model["features"] = feats
    d["model"] = model
    for key in ("seed", "epochs", "lr", "batch_size", "max_steps", "score_thresh", "iobb_thresh"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    try:
        return TrainConfig.from_dict(d)
    except TypeError as exc:   # unknown key in the JSON
        raise UsageError(f"bad training config: {exc}") from exc


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg_dict = _read_json(args.config) if args.config else {}
    if args.kappa is not None:
        cfg_dict["kappa"] = args.kappa
    try:
        cfg = SynthConfig.from_dict(cfg_dict)
    except TypeError as exc:
        raise UsageError(f"bad generator config: {exc}") from exc
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    tables, images = synth_generate(cfg, args.seed)
    write_dataset(tables, images, out)
    joined, excluded = join(tables, image_dir=out / "images")
    write_manifest(joined, out / "manifest.jsonl")
    write_exclusions(excluded, out / "exclusions.csv")
    _write_json(out / "generate_config.json", {"command": "generate", "seed": args.seed, "synth": cfg.to_dict()})
    print(f"wrote {len(joined)} instances to {out}")
    return 0


def cmd_join(args) -> int:
    data = Path(args.data)
    out = Path(args.out) if args.out else data
    image_dir = data / "images"
    joined, excluded = join(read_tables(data), image_dir=image_dir if image_dir.is_dir() else None)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(joined, out / "manifest.jsonl")
    write_exclusions(excluded, out / "exclusions.csv")
    print(f"joined {len(joined)}, excluded {len(excluded)}")
    return 0


def _resolved(command: str, args, cfg: Optional[TrainConfig] = None, **extra) -> dict:
    d = {"command": command, "data": str(getattr(args, "data", "")), **extra}
    if cfg is not None:
        d["train"] = cfg.to_dict()
    return d


def _train_and_test(data_dir, cfg: TrainConfig, out: Optional[Path], resolved: dict):
    """Train on the train split, then score the test split. Returns (result, test report)."""
    ds = load_dataset(data_dir)
    result = train(ds, cfg, out_dir=out)
    test = ds.subset("test")
    if len(test) == 0:
        raise UsageError(f"{data_dir} has no test split")
    rep = evaluate_model(result.model, test, cfg.score_thresh, cfg.iobb_thresh, sweep=DEFAULT_SWEEP,
                         config=resolved)
    return result, rep


def cmd_train(args) -> int:
    cfg = train_config(args)
    out = Path(args.out)
    ds = load_dataset(args.data)
    result = train(ds, cfg, out_dir=out)
    _, val = split_train_val(ds, cfg.val_fraction)
    resolved = _resolved("train", args, cfg, split="validate")
    if len(val):
        rep = evaluate_model(result.model, val, cfg.score_thresh, cfg.iobb_thresh, sweep=DEFAULT_SWEEP,
                             config=resolved)
        rep.write(out, "val_report")
        print(f"best epoch {result.best_epoch}: validation mAP {rep.mean_ap:.4f} mAR {rep.mean_ar:.4f}")
    _write_json(out / "train_config.json", resolved)
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    ds = load_dataset(args.data)
    split = ds.subset(args.split)
    if len(split) == 0:
        raise UsageError(f"split {args.split!r} is empty in {args.data}")
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    resolved = _resolved("evaluate", args, split=args.split, score_thresh=args.score_thresh,
                         iobb_thresh=args.iobb_thresh)
    if args.checkpoint is not None:
        model, _, _, meta = load_checkpoint(args.checkpoint)
        if model.cfg.image_size != split.images.shape[-1]:
            raise CheckpointError(f"checkpoint expects {model.cfg.image_size} px images, "
                                  f"data has {split.images.shape[-1]}")
        resolved.update(checkpoint=str(args.checkpoint), model=model.cfg.to_dict(),
                        train=meta.get("train_config"))
        preds = predict(model, split, args.score_thresh)
    else:
        preds = read_detections(args.predictions)
        resolved["predictions"] = str(args.predictions)
    rep = evaluate(preds, ground_truth(split), args.score_thresh, args.iobb_thresh, sweep=DEFAULT_SWEEP,
                   config=resolved)
    rep.write(out, "report")
    print(f"mAP {rep.mean_ap:.4f} mAR {rep.mean_ar:.4f}")
    return 0


def _table_rows(named: Sequence[tuple]) -> List[dict]:
    rows = []
    for name, rep in named:
        row = {"variant": name, "mean_ap": rep.mean_ap, "mean_ar": rep.mean_ar}
        for c in rep.classes:
            row[f"ap_{c.label}"] = c.ap
            row[f"ar_{c.label}"] = c.ar
        rows.append(row)
    return rows


def _write_table(rows: List[dict], out: Path, stem: str, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fields = ["variant", "mean_ap", "mean_ar"] + [f"{k}_{c}" for c in range(1, len(CLASS_NAMES) + 1)
                                                   for k in ("ap", "ar")]
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    _write_json(out / f"{stem}.json", {"rows": rows, "config": resolved})
    for r in rows:
        print(f"{r['variant']:<28} mAP {r['mean_ap']:.4f}  mAR {r['mean_ar']:.4f}")


def _ablate(args, variants: Dict[str, TrainConfig], stem: str, what: str) -> int:
    out = Path(args.out)
    named = []
    for name, cfg in variants.items():
        resolved = _resolved(stem, args, cfg, variant=name)
        _, rep = _train_and_test(args.data, cfg, out / name, resolved)
        rep.write(out / name, "report")
        named.append((name, rep))
    _write_table(_table_rows(named), out, stem,
                 {"command": stem, "data": str(args.data), what: list(variants),
                  "train": {k: c.to_dict() for k, c in variants.items()}})
    return 0


def cmd_ablate_fusion(args) -> int:
    base = train_config(args)
    methods = [FusionMethod.parse(m).value for m in args.methods.split(",")] if args.methods \
        else [m.value for m in FusionMethod]
    if Mode.parse(base.model.mode) is Mode.BASELINE:
        raise UsageError("fusion ablation needs a clinical mode")
    variants = {}
    for m in methods:
        d = base.to_dict()
        d["model"]["fusion"] = m
        variants[m] = TrainConfig.from_dict(d)
    return _ablate(args, variants, "ablate_fusion", "fusions")


def cmd_ablate_features(args) -> int:
    base = train_config(args)
    if Mode.parse(base.model.mode) is Mode.BASELINE:
        raise UsageError("feature ablation needs a clinical mode")
    subsets = [_features(s) for s in args.subsets.split(";")] if args.subsets else list(FEATURE_ABLATION)
    variants = {}
    for feats in subsets:
        d = base.to_dict()
        d["model"]["features"] = list(feats)
        variants["+".join(feats)] = TrainConfig.from_dict(d)
    return _ablate(args, variants, "ablate_features", "subsets")


def _load_report(path: Path) -> EvalReport:
    p = path / "report.json" if path.is_dir() else path
    if not p.is_file():
        raise FileNotFoundError(f"no report at {p}")
    d = json.loads(p.read_text())
    from .metrics import ClassReport
    classes = [ClassReport(c["label"], c["name"], c["tp"], c["fp"], c["fn"], c["ap"], c["ar"]) for c in d["classes"]]
    return EvalReport(d["score_thresh"], d["iobb_thresh"], classes, d["mean_ap"], d["mean_ar"],
                      sweep=[(s["iobb_thresh"], s["mean_ap"], s["mean_ar"]) for s in d.get("sweep", [])],
                      config=d.get("config", {}))


def cmd_report(args) -> int:
    named = []
    for p in args.reports:
        path = Path(p)
        named.append((path.stem if path.is_file() else path.name, _load_report(path)))
    _write_table(_table_rows(named), Path(args.out), "summary",
                 {"command": "report", "reports": [str(p) for p in args.reports],
                  "sources": {n: r.config for n, r in named}})
    return 0


# -- parser --------------------------------------------------------------------

def _train_flags(p: argparse.ArgumentParser, mode_default: Optional[str] = None) -> None:
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON training config; flags override its keys")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=mode_default)
    p.add_argument("--fusion", choices=[m.value for m in FusionMethod])
    p.add_argument("--features", help="comma-separated clinical features")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--score-thresh", type=float, dest="score_thresh")
    p.add_argument("--iobb-thresh", type=float, dest="iobb_thresh")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdfnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--kappa", type=float, help="clinical coupling in [0, 1]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("join", help="join the tables of a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output directory (default: the dataset directory)")
    p.set_defaults(func=cmd_join)

    p = sub.add_parser("train", help="train one model")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint or a detections file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="CSV with image_id,label,score,x,y,w,h")
    p.add_argument("--split", default="test")
    p.add_argument("--score-thresh", type=float, default=0.05, dest="score_thresh")
    p.add_argument("--iobb-thresh", type=float, default=0.5, dest="iobb_thresh")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-fusion", help="compare fusion methods")
    _train_flags(p, mode_default="mdf")
    p.add_argument("--methods", help="comma-separated subset of the four methods")
    p.set_defaults(func=cmd_ablate_fusion)

    p = sub.add_parser("ablate-features", help="compare clinical feature subsets")
    _train_flags(p, mode_default="mdf")
    p.add_argument("--subsets", help="';'-separated subsets, each comma-separated")
    p.set_defaults(func=cmd_ablate_features)

    p = sub.add_parser("report", help="collect report JSON files into one table")
    p.add_argument("reports", nargs="+", help="report.json files or directories holding one")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, SchemaError, CheckpointError, TrainingDiverged, FileNotFoundError, NotADirectoryError,
            PermissionError, ValueError) as exc:
        print(f"mdfnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
