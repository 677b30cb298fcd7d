"""Loss primitives, the five detection losses, and the uncertainty-weighted total."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator, Optional

import numpy as np

from .tensor import Tensor, ops
from .tensor.core import NumericError
from .tensor.nn import Module, parameter
from .tensor.ops import stable_sigmoid

SMOOTH_L1_BETA = 1.0 / 9.0
LOSS_NAMES = ("l_cls", "l_bb", "l_mask", "l_obj_rpn", "l_bb_rpn")


def smooth_l1(pred, target, beta: float = SMOOTH_L1_BETA) -> float:
    """Summed smooth-L1 of ``pred - target`` on plain sequences."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = np.abs(p - t)
    return float(np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta).sum())


def smooth_l1_tensor(pred: Tensor, target: np.ndarray, beta: float = SMOOTH_L1_BETA) -> Tensor:
    """Differentiable summed smooth-L1 against a constant target."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    ad = np.abs(diff)
    quad = ad < beta
    val = np.where(quad, 0.5 * diff * diff / beta, ad - 0.5 * beta).sum()

    def bw(g):
        return (g * np.where(quad, diff / beta, np.sign(diff)),)

    return Tensor._from_op(np.asarray(val), (pred,), bw, "smooth_l1")


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; ``target`` in [0, 1], same shape as ``logits``."""
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {target.shape}")
    x = logits.data
    n = max(x.size, 1)
    # log(1 + exp(-|x|)) + max(x, 0) - x * t
    val = (np.logaddexp(0.0, -np.abs(x)) + np.maximum(x, 0) - x * target).sum() / n

    def bw(g):
        return (g * (stable_sigmoid(x) - target) / n,)

    return Tensor._from_op(np.asarray(val), (logits,), bw, "bce_with_logits")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows of ``logits`` (R, C)."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = ops.log_softmax(logits, axis=1)
    picked = ops.select(logp, (np.arange(labels.size), labels))
    return ops.mul(ops.sum(picked), -1.0 / max(labels.size, 1))


@dataclass
class LossTerms:
    l_cls: Tensor
    l_bb: Tensor
    l_mask: Tensor
    l_obj_rpn: Tensor
    l_bb_rpn: Tensor
    warning: Optional[str] = None

    def __iter__(self) -> Iterator[Tensor]:
        return iter(getattr(self, n) for n in LOSS_NAMES)

    def values(self) -> dict:
        return {n: getattr(self, n).item() for n in LOSS_NAMES}

    def check(self) -> None:
        for n in LOSS_NAMES:
            v = getattr(self, n).item()
            if not math.isfinite(v) or v < 0:
                raise NumericError(f"loss term {n} is invalid: {v}")


@dataclass
class DetectorPredictions:
    """Differentiable outputs restricted to the entries that carry a loss."""

    cls_logits: Tensor        # (R, C) sampled RoIs
    box_deltas: Tensor        # (P, 4) positive RoIs, matched-class deltas
    mask_logits: Tensor       # (P, M, M) positive RoIs, matched-class mask
    rpn_logits: Tensor        # (A,) sampled anchors
    rpn_deltas: Tensor        # (Q, 4) positive anchors


@dataclass
class DetectorTargets:
    cls_labels: np.ndarray
    box_targets: np.ndarray
    mask_targets: np.ndarray
    rpn_labels: np.ndarray
    rpn_targets: np.ndarray


def _zero() -> Tensor:
    return Tensor(0.0)


def compute_losses(pred: DetectorPredictions, tgt: DetectorTargets, beta: float = SMOOTH_L1_BETA) -> LossTerms:
    """The five task losses.

    Classification terms are means over contributing RoIs/anchors; the two
    regression terms are smooth-L1 sums over coordinates averaged over
    positives. Terms without contributing entries are exactly zero.
    """
    warning = None
    if tgt.cls_labels.size == 0 and tgt.rpn_labels.size == 0:
        warning = "no proposals or anchors contributed to the loss"
    l_cls = cross_entropy(pred.cls_logits, tgt.cls_labels) if tgt.cls_labels.size else _zero()
    n_pos = tgt.box_targets.shape[0]
    if n_pos:
        l_bb = ops.mul(smooth_l1_tensor(pred.box_deltas, tgt.box_targets, beta), 1.0 / n_pos)
        l_mask = bce_with_logits(pred.mask_logits, tgt.mask_targets)
    else:
        l_bb, l_mask = _zero(), _zero()
    l_obj = bce_with_logits(pred.rpn_logits, tgt.rpn_labels.astype(np.float64)) if tgt.rpn_labels.size else _zero()
    n_rpn_pos = tgt.rpn_targets.shape[0]
    if n_rpn_pos:
        l_bb_rpn = ops.mul(smooth_l1_tensor(pred.rpn_deltas, tgt.rpn_targets, beta), 1.0 / n_rpn_pos)
    else:
        l_bb_rpn = _zero()
    return LossTerms(l_cls, l_bb, l_mask, l_obj, l_bb_rpn, warning)


class UncertaintyWeights(Module):
    """Trainable per-task weights, stored as ``s = log(alpha**2)`` so alpha > 0 always."""

    def __init__(self, n_terms: int = len(LOSS_NAMES), init_alpha: float = 1.0):
        self.log_alpha_sq = parameter(np.full(n_terms, 2.0 * math.log(init_alpha)), name="log_alpha_sq")

    @classmethod
    def from_alpha(cls, alpha) -> "UncertaintyWeights":
        alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
        if (alpha <= 0).any():
            raise ValueError("alpha must be positive")
        w = cls(alpha.size)
        w.log_alpha_sq.data[...] = np.log(alpha ** 2)
        return w

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(0.5 * self.log_alpha_sq.data)


def total_loss(terms, weights: UncertaintyWeights) -> Tensor:
    """Sum over tasks of ``l / (2 alpha**2) + log(alpha**2)``."""
    terms = list(terms)
    s = weights.log_alpha_sq
    if s.shape[0] != len(terms):
        raise ValueError(f"{len(terms)} loss terms but {s.shape[0]} weights")
    for t in terms:
        if not np.isfinite(t.data).all():
            raise NumericError("non-finite loss term")
    stacked = ops.concat([ops.reshape(t, (1,)) for t in terms], axis=0)
    inv = ops.exp(ops.mul(s, -1.0))
    return ops.sum(ops.add(ops.mul(ops.mul(stacked, inv), 0.5), s))
