"""IoBB matching, per-class confusion counts, AP/AR and IoBB-threshold sweeps.

IoBB (intersection over the *predicted* box) is deliberately asymmetric:
a small prediction sitting inside a large ground-truth region scores 1.

Matching runs per (image, class). Predictions are visited in descending
score (ties broken by input index); each takes the free ground truth with the
highest IoBB at or above the threshold. When every eligible ground truth is
already taken, an augmenting path is searched so that an earlier prediction
can move to another eligible box. Without that step a plain greedy pass can
leave a true positive unclaimed; with it the number of true positives at every
score cut is the maximum achievable, which also makes AP non-increasing in the
IoBB threshold.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .detection.head import CLASS_NAMES
from .structures import Detection, GroundTruthBox

DEFAULT_SWEEP = tuple(round(0.1 * k, 1) for k in range(1, 10))
CLASSES = tuple(range(1, len(CLASS_NAMES) + 1))


def iobb(pred, gt) -> float:
    """Area of ``pred ∩ gt`` over the area of ``pred``; boxes are (x, y, w, h)."""
    px, py, pw, ph = (float(v) for v in pred)
    gx, gy, gw, gh = (float(v) for v in gt)
    if not (pw > 0 and ph > 0):
        raise ValueError(f"predicted box must have positive area, got {pw}x{ph}")
    iw = min(px + pw, gx + gw) - max(px, gx)
    ih = min(py + ph, gy + gh) - max(py, gy)
    if iw <= 0 or ih <= 0:
        return 0.0
    # the intersection can exceed pred area by an ulp when edges coincide
    return min(1.0, (iw * ih) / (pw * ph))


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def n_gt(self) -> int:
        return self.tp + self.fn


@dataclass
class MatchResult:
    counts: Dict[int, ClassCounts]
    # per input prediction: True = TP, False = FP, None = dropped by the score threshold
    flags: List[Optional[bool]]
    matched_gt: List[Optional[int]]


def _order(preds: Sequence[Detection]) -> List[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))


def _match_group(pred_boxes, gt_boxes, thresh: float) -> List[int]:
    """Match score-ordered predictions to GTs; returns the GT index per prediction (-1 = none)."""
    n_p, n_g = len(pred_boxes), len(gt_boxes)
    adj: List[List[int]] = []
    for p in pred_boxes:
        ious = [iobb(p, g) for g in gt_boxes]
        ok = [j for j in range(n_g) if ious[j] >= thresh]
        adj.append(sorted(ok, key=lambda j: (-ious[j], j)))
    owner = [-1] * n_g
    assigned = [-1] * n_p

    def augment(p: int, seen: set) -> bool:
        for j in adj[p]:
            if owner[j] == -1:
                owner[j], assigned[p] = p, j
                return True
        for j in adj[p]:
            if j in seen:
                continue
            seen.add(j)
            if augment(owner[j], seen):
                owner[j], assigned[p] = p, j
                return True
        return False

    for p in range(n_p):
        if adj[p]:
            augment(p, set())
    return assigned


def _groups(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], keep: Sequence[int]):
    by_key: Dict[Tuple, Tuple[List[int], List[int]]] = {}
    for i in keep:
        by_key.setdefault((preds[i].image_id, preds[i].label), ([], []))[0].append(i)
    for j, g in enumerate(gts):
        by_key.setdefault((g.image_id, g.label), ([], []))[1].append(j)
    return by_key


def match_detections(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], score_thresh: float = 0.05,
                     iobb_thresh: float = 0.5) -> MatchResult:
    """TP/FP/FN per class plus a flag per prediction."""
    if not (0.0 <= score_thresh <= 1.0 and 0.0 <= iobb_thresh <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    keep = [i for i in _order(preds) if preds[i].score >= score_thresh]
    flags: List[Optional[bool]] = [None] * len(preds)
    matched: List[Optional[int]] = [None] * len(preds)
    counts = {c: ClassCounts() for c in CLASSES}
    for (_, label), (pi, gi) in _groups(preds, gts, keep).items():
        assigned = _match_group([preds[i].xywh for i in pi], [gts[j].xywh for j in gi], iobb_thresh)
        cc = counts.setdefault(label, ClassCounts())
        for k, i in enumerate(pi):
            flags[i] = assigned[k] >= 0
            matched[i] = gi[assigned[k]] if assigned[k] >= 0 else None
        tp = sum(a >= 0 for a in assigned)
        cc.tp += tp
        cc.fp += len(pi) - tp
        cc.fn += len(gi) - tp
    return MatchResult(counts, flags, matched)


def pr_curve(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], label: int, iobb_thresh: float = 0.5,
             score_thresh: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(scores, recall, precision) at every distinct score cut of one class, highest score first."""
    cp = [d for d in preds if d.label == label]
    cg = [g for g in gts if g.label == label]
    n_gt = len(cg)
    res = match_detections(cp, cg, score_thresh, iobb_thresh)
    order = [i for i in _order(cp) if res.flags[i] is not None]
    if not order:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    scores = np.array([cp[i].score for i in order])
    tp = np.cumsum([1.0 if res.flags[i] else 0.0 for i in order])
    last = np.r_[scores[1:] != scores[:-1], True]   # end of each equal-score block
    scores, tp = scores[last], tp[last]
    n_det = np.flatnonzero(last) + 1.0
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    precision = tp / n_det
    return scores, recall, precision


def _area(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated area: precision envelope integrated over recall steps."""
    if recall.size == 0:
        return 0.0
    env = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * env))


def average_precision(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], iobb_thresh: float = 0.5,
                      label: Optional[int] = None, score_thresh: float = 0.0) -> float:
    """All-point AP for one class (or for all inputs treated as one class when ``label`` is None)."""
    if label is None:
        preds = [Detection(1, d.score, *d.xywh, image_id=(d.image_id, d.label)) for d in preds]
        gts = [GroundTruthBox(1, *g.xywh, image_id=(g.image_id, g.label)) for g in gts]
        label = 1
    if not any(g.label == label for g in gts):
        return 0.0
    _, r, p = pr_curve(preds, gts, label, iobb_thresh, score_thresh)
    return _area(r, p)


def average_recall(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], label: int,
                   score_thresh: float = 0.05, iobb_thresh: float = 0.5) -> float:
    """Recall at the fixed operating point (score threshold, IoBB threshold)."""
    cc = match_detections(preds, gts, score_thresh, iobb_thresh).counts[label]
    return cc.tp / cc.n_gt if cc.n_gt else 0.0


@dataclass
class ClassReport:
    label: int
    name: str
    tp: int
    fp: int
    fn: int
    ap: float
    ar: float

    @property
    def n_gt(self) -> int:
        return self.tp + self.fn


@dataclass
class EvalReport:
    score_thresh: float
    iobb_thresh: float
    classes: List[ClassReport]
    mean_ap: float
    mean_ar: float
    pr_curves: Dict[int, List[Tuple[float, float, float]]] = field(default_factory=dict)
    sweep: List[Tuple[float, float, float]] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def by_label(self, label: int) -> ClassReport:
        return next(c for c in self.classes if c.label == label)

    def subset_ap(self, labels: Iterable[int]) -> float:
        vals = [self.by_label(l).ap for l in labels]
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self) -> dict:
        return {
            "score_thresh": self.score_thresh,
            "iobb_thresh": self.iobb_thresh,
            "mean_ap": self.mean_ap,
            "mean_ar": self.mean_ar,
            "classes": [{"label": c.label, "name": c.name, "tp": c.tp, "fp": c.fp, "fn": c.fn, "n_gt": c.n_gt,
                         "ap": c.ap, "ar": c.ar} for c in self.classes],
            "sweep": [{"iobb_thresh": t, "mean_ap": a, "mean_ar": r} for t, a, r in self.sweep],
            "config": self.config,
        }

    def write(self, out_dir, stem: str = "report") -> None:
        """``<stem>.json``, ``<stem>.csv`` (per class), ``<stem>_sweep.csv`` and ``<stem>_pr.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "name", "tp", "fp", "fn", "n_gt", "ap", "ar"])
            for c in self.classes:
                w.writerow([c.label, c.name, c.tp, c.fp, c.fn, c.n_gt, f"{c.ap:.6f}", f"{c.ar:.6f}"])
            w.writerow(["all", "mean", sum(c.tp for c in self.classes), sum(c.fp for c in self.classes),
                        sum(c.fn for c in self.classes), sum(c.n_gt for c in self.classes),
                        f"{self.mean_ap:.6f}", f"{self.mean_ar:.6f}"])
        with open(out / f"{stem}_sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iobb_thresh", "mean_ap", "mean_ar"])
            for t, a, r in self.sweep:
                w.writerow([t, f"{a:.6f}", f"{r:.6f}"])
        with open(out / f"{stem}_pr.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "name", "score", "recall", "precision"])
            for label, pts in sorted(self.pr_curves.items()):
                for s, r, p in pts:
                    w.writerow([label, CLASS_NAMES[label - 1], f"{s:.6f}", f"{r:.6f}", f"{p:.6f}"])


def _means(preds, gts, score_thresh, iobb_thresh):
    counts = match_detections(preds, gts, score_thresh, iobb_thresh).counts
    aps, ars = [], []
    for c in CLASSES:
        if counts[c].n_gt == 0:
            continue
        aps.append(average_precision(preds, gts, iobb_thresh, label=c, score_thresh=score_thresh))
        ars.append(counts[c].tp / counts[c].n_gt)
    return (float(np.mean(aps)) if aps else 0.0), (float(np.mean(ars)) if ars else 0.0)


def sweep_iobb(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], thresholds: Sequence[float] = DEFAULT_SWEEP,
               score_thresh: float = 0.05) -> List[Tuple[float, float, float]]:
    """``(threshold, mAP, mAR)`` per IoBB threshold; thresholds must be ascending."""
    th = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(th, th[1:])):
        raise ValueError("sweep thresholds must be sorted ascending")
    return [(t, *_means(preds, gts, score_thresh, t)) for t in th]


def evaluate(preds: Sequence[Detection], gts: Sequence[GroundTruthBox], score_thresh: float = 0.05,
             iobb_thresh: float = 0.5, sweep: Optional[Sequence[float]] = DEFAULT_SWEEP,
             config: Optional[dict] = None) -> EvalReport:
    """Full report. mAP / mAR average over classes that have at least one ground-truth box."""
    counts = match_detections(preds, gts, score_thresh, iobb_thresh).counts
    classes, curves = [], {}
    for c in CLASSES:
        cc = counts[c]
        ap = average_precision(preds, gts, iobb_thresh, label=c, score_thresh=score_thresh) if cc.n_gt else 0.0
        ar = cc.tp / cc.n_gt if cc.n_gt else 0.0
        classes.append(ClassReport(c, CLASS_NAMES[c - 1], cc.tp, cc.fp, cc.fn, ap, ar))
        s, r, p = pr_curve(preds, gts, c, iobb_thresh, score_thresh)
        curves[c] = [(float(a), float(b), float(d)) for a, b, d in zip(s, r, p)]
    with_gt = [c for c in classes if c.n_gt > 0]
    mean_ap = float(np.mean([c.ap for c in with_gt])) if with_gt else 0.0
    mean_ar = float(np.mean([c.ar for c in with_gt])) if with_gt else 0.0
    rows = sweep_iobb(preds, gts, sweep, score_thresh) if sweep else []
    return EvalReport(score_thresh, iobb_thresh, classes, mean_ap, mean_ar, curves, rows, dict(config or {}))


def read_detections(path) -> List[Detection]:
    """CSV with header ``image_id,label,score,x,y,w,h`` (label = class name or 1-based index)."""
    from .structures import class_index
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Detection(class_index(row["label"] if not row["label"].isdigit() else int(row["label"])),
                                 float(row["score"]), float(row["x"]), float(row["y"]), float(row["w"]),
                                 float(row["h"]), image_id=row["image_id"]))
    return out


def write_detections(dets: Iterable[Detection], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "label", "score", "x", "y", "w", "h"])
        for d in dets:
            w.writerow([d.image_id, CLASS_NAMES[d.label - 1], repr(d.score), repr(d.x), repr(d.y), repr(d.w),
                        repr(d.h)])
