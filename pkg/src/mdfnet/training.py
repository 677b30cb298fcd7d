"""SGD training loop with uncertainty-weighted losses, early stopping and checkpoints."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .clinical import NormalizationStats, fit_normalization
from .data.dataset import LoadedDataset
from .losses import LOSS_NAMES, UncertaintyWeights, total_loss
from .metrics import EvalReport, evaluate
from .model import MDFNet, ModelConfig, Mode
from .structures import Detection, GroundTruthBox
from .tensor import SGD, NumericError, backward
from .tensor import checkpoint as ckpt

log = logging.getLogger(__name__)

AMBIGUOUS_PAIR = (3, 5)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"training diverged at step {step}: {detail}")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 20
    batch_size: int = 2
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_norm: Optional[float] = 10.0
    min_alpha: Optional[float] = 1.0     # lower bound on each alpha after every step; None leaves it free
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.1      # carved off the train split when no "validate" split exists
    eval_every: int = 1
    max_steps: Optional[int] = None
    score_thresh: float = 0.05
    iobb_thresh: float = 0.5

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr >= 0 and 0 <= momentum < 1")
        if self.min_alpha is not None and not self.min_alpha > 0:
            raise ValueError("min_alpha must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.patience < 1 or self.eval_every < 1:
            raise ValueError("patience and eval_every must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class TrainResult:
    model: MDFNet
    weights: UncertaintyWeights
    stats: Optional[NormalizationStats]
    history: List[dict]
    best_epoch: int
    best_map: float
    steps: int


def split_train_val(ds: LoadedDataset, val_fraction: float):
    train = ds.subset("train")
    val = ds.subset("validate")
    if len(val) == 0 and val_fraction > 0 and len(train) > 1:
        n_val = max(1, int(round(len(train) * val_fraction)))
        val = train.take(range(len(train) - n_val, len(train)))
        train = train.take(range(len(train) - n_val))
    return train, val


def ground_truth(ds: LoadedDataset) -> List[GroundTruthBox]:
    out = []
    for i, inst in enumerate(ds.instances):
        for b in inst.boxes:
            out.append(GroundTruthBox(b.label, b.x, b.y, b.w, b.h, image_id=inst.keys.dicom_id))
    return out


def predict(model: MDFNet, ds: LoadedDataset, score_thresh: float = 0.05, batch_size: int = 16) -> List[Detection]:
    """Detections for every image in ``ds``; ``image_id`` is the dicom id."""
    out: List[Detection] = []
    for start in range(0, len(ds), batch_size):
        idx = list(range(start, min(start + batch_size, len(ds))))
        records = [ds.instances[i].record for i in idx] if model.mode.uses_clinical else None
        per_image = model.detect(ds.images[idx], records, score_thresh)
        for i, dets in zip(idx, per_image):
            did = ds.instances[i].keys.dicom_id
            out.extend(Detection(d.label, d.score, d.x, d.y, d.w, d.h, image_id=did) for d in dets)
    return out


def evaluate_model(model: MDFNet, ds: LoadedDataset, score_thresh: float = 0.05, iobb_thresh: float = 0.5,
                   sweep=None, config: Optional[dict] = None) -> EvalReport:
    preds = predict(model, ds, score_thresh)
    return evaluate(preds, ground_truth(ds), score_thresh, iobb_thresh, sweep=sweep, config=config)


def _probe_loss(model: MDFNet, weights: UncertaintyWeights, ds: LoadedDataset, seed: int) -> float:
    """Loss on a fixed batch with a fixed sampler; lets frozen runs be compared across epochs."""
    batch = ds.batch(range(min(2, len(ds))))
    terms, _ = model.loss_terms(batch, np.random.default_rng([seed, 99]))
    return float(total_loss(terms, weights).item())


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, model: MDFNet, weights: UncertaintyWeights, stats: Optional[NormalizationStats],
                    meta: Optional[dict] = None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors["loss.log_alpha_sq"] = weights.log_alpha_sq.data
    md = {"model_config": model.cfg.to_dict(), **(meta or {})}
    if stats is not None:
        tensors.update(stats.to_arrays("norm."))
        md["norm_features"] = list(stats.features)
    ckpt.save(path, tensors, md)


def load_checkpoint(path):
    """``(model, weights, stats, metadata)`` rebuilt from a checkpoint file."""
    tensors, md = ckpt.load(path)
    cfg = ModelConfig.from_dict(md["model_config"])
    stats = None
    if "norm_features" in md:
        stats = NormalizationStats.from_arrays(md["norm_features"], tensors, "norm.")
    model = MDFNet(cfg, stats, seed=0)
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    expected = model.state_dict()
    mismatch = [k for k in expected if k not in state or state[k].shape != expected[k].shape]
    if mismatch or set(state) - set(expected):
        raise ckpt.CheckpointError(f"checkpoint does not match its recorded config: {mismatch[:5]}")
    model.load_state_dict(state)
    weights = UncertaintyWeights(len(LOSS_NAMES))
    weights.log_alpha_sq.data[...] = tensors["loss.log_alpha_sq"]
    return model, weights, stats, md


# -- loop ------------------------------------------------------------------

HISTORY_FIELDS = (["epoch", "steps"] + list(LOSS_NAMES) + ["total"] + [f"alpha_{n}" for n in LOSS_NAMES]
                  + ["probe_total", "val_map", "val_mar", "val_ambiguous_ap", "seconds"])


def train(dataset: LoadedDataset, config: TrainConfig, out_dir=None, val: Optional[LoadedDataset] = None) -> TrainResult:
    """Train one model.

    If ``val`` is not given it is taken from ``dataset`` (split "validate", or
    the tail of the train split). With ``out_dir`` set, ``metrics.csv`` gets one
    row per epoch and ``best.ckpt`` holds the checkpoint with the highest
    validation mAP (the final weights when there is no validation data).
    """
    cfg = config
    if val is None:
        train_ds, val = split_train_val(dataset, cfg.val_fraction)
    else:
        train_ds = dataset
    if len(train_ds) == 0:
        raise ValueError("training split is empty")
    mode = Mode.parse(cfg.model.mode)
    stats = fit_normalization([i.record for i in train_ds.instances], cfg.model.features) \
        if mode.uses_clinical else None
    model = MDFNet(cfg.model, stats, seed=cfg.seed)
    weights = UncertaintyWeights(len(LOSS_NAMES))
    opt = SGD(model.parameters() + weights.parameters(), lr=cfg.lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    # an easy term (RPN objectness) drives its alpha toward 0 and its weight
    # 1/(2 alpha^2) up without bound, which swamps the classifier gradient
    s_floor = None if cfg.min_alpha is None else 2.0 * math.log(cfg.min_alpha)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
    meta = {"train_config": cfg.to_dict()}

    history: List[dict] = []
    best_map, best_epoch, since_best, step = -1.0, 0, 0, 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(train_ds))
            sampler = np.random.default_rng([cfg.seed, 2, epoch])
            sums = {n: 0.0 for n in LOSS_NAMES}
            sums["total"] = 0.0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = train_ds.batch(order[start:start + cfg.batch_size])
                try:
                    terms, _ = model.loss_terms(batch, sampler)
                    terms.check()
                    loss = total_loss(terms, weights)
                    if not math.isfinite(loss.item()):
                        raise NumericError(f"total loss {loss.item()}")
                    backward(loss)
                except NumericError as exc:
                    raise TrainingDiverged(step, str(exc)) from exc
                opt.step()
                opt.zero_grad()
                if s_floor is not None:
                    np.maximum(weights.log_alpha_sq.data, s_floor, out=weights.log_alpha_sq.data)
                if not all(np.isfinite(p.data).all() for p in opt.params):
                    raise TrainingDiverged(step, "non-finite parameters after update")
                with np.errstate(over="ignore"):
                    if not np.isfinite(weights.alpha).all():
                        raise TrainingDiverged(step, "loss weight alpha overflowed")
                for n, v in terms.values().items():
                    sums[n] += v
                sums["total"] += loss.item()
                n_batches += 1
                step += 1
            row = {"epoch": epoch, "steps": step}
            row.update({n: sums[n] / max(n_batches, 1) for n in list(LOSS_NAMES) + ["total"]})
            row.update({f"alpha_{n}": float(a) for n, a in zip(LOSS_NAMES, weights.alpha)})
            row["probe_total"] = _probe_loss(model, weights, train_ds, cfg.seed)
            evaluated = len(val) > 0 and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs)
            if evaluated:
                rep = evaluate_model(model, val, cfg.score_thresh, cfg.iobb_thresh, sweep=None)
                row.update(val_map=rep.mean_ap, val_mar=rep.mean_ar, val_ambiguous_ap=rep.subset_ap(AMBIGUOUS_PAIR))
            else:
                row.update(val_map=float("nan"), val_mar=float("nan"), val_ambiguous_ap=float("nan"))
            row["seconds"] = time.perf_counter() - t0
            history.append(row)
            if out is not None:
                writer.writerow(row)
                fh.flush()
            log.info("epoch %d: total %.4f val mAP %s", epoch, row["total"], row["val_map"])

            if evaluated:
                if row["val_map"] > best_map:
                    best_map, best_epoch, since_best = row["val_map"], epoch, 0
                    if out is not None:
                        save_checkpoint(out / "best.ckpt", model, weights, stats, {**meta, "epoch": epoch})
                    best_state = (model.state_dict(), weights.log_alpha_sq.data.copy())
                else:
                    since_best += cfg.eval_every
                    if since_best >= cfg.patience:
                        log.info("early stop after epoch %d (best %d)", epoch, best_epoch)
                        break
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if out is not None:
            fh.close()

    if best_epoch > 0:
        state, s = best_state
        model.load_state_dict(state)
        weights.log_alpha_sq.data[...] = s
    else:
        best_epoch = len(history)
        if out is not None:
            save_checkpoint(out / "best.ckpt", model, weights, stats, {**meta, "epoch": best_epoch})
    return TrainResult(model, weights, stats, history, best_epoch, best_map, step)
