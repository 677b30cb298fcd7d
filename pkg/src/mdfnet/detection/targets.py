"""Training targets for the RPN anchors and the second-stage RoIs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .boxes import encode_deltas, iou_xyxy

IGNORE = -1


@dataclass
class RoiTargets:
    labels: np.ndarray          # (N,) class id, 0 background, -1 ignored
    matched_gt: np.ndarray      # (N,) index of the matched GT box, -1 when none
    box_targets: np.ndarray     # (N, 4) deltas; zero rows for non-positives
    mask_targets: np.ndarray    # (N, M, M) binary grids; zero for non-positives
    max_iou: np.ndarray         # (N,)


def mask_grid(proposal_xyxy: np.ndarray, gt_xyxy: np.ndarray, size: int) -> np.ndarray:
    """Binary (size, size) grid over the proposal: cell centre inside the GT box."""
    x1, y1, x2, y2 = proposal_xyxy
    cx = x1 + (np.arange(size) + 0.5) * (x2 - x1) / size
    cy = y1 + (np.arange(size) + 0.5) * (y2 - y1) / size
    inside_x = (cx >= gt_xyxy[0]) & (cx <= gt_xyxy[2])
    inside_y = (cy >= gt_xyxy[1]) & (cy <= gt_xyxy[3])
    return (inside_y[:, None] & inside_x[None, :]).astype(np.float64)


def assign_targets(proposals_xyxy: np.ndarray, gt_xyxy: np.ndarray, gt_labels: np.ndarray,
                   fg_thresh: float = 0.5, bg_thresh: float = 0.3, mask_size: int = 14) -> RoiTargets:
    """Label proposals by best IoU with a GT box.

    IoU >= ``fg_thresh`` (closed bound) is positive with the GT's class and
    encoded deltas; IoU < ``bg_thresh`` is background; anything between is
    ignored. Ties between GT boxes go to the lower GT index.
    """
    if fg_thresh < bg_thresh:
        raise ValueError("fg_thresh must be >= bg_thresh")
    props = np.asarray(proposals_xyxy, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gt_xyxy, dtype=np.float64).reshape(-1, 4)
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    n = props.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    box_t = np.zeros((n, 4))
    mask_t = np.zeros((n, mask_size, mask_size))
    if gts.shape[0] == 0 or n == 0:
        return RoiTargets(labels, matched, box_t, mask_t, np.zeros(n))
    ious = iou_xyxy(props, gts)
    best = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best]
    pos = best_iou >= fg_thresh
    ignore = (~pos) & (best_iou >= bg_thresh)
    labels[pos] = gt_labels[best[pos]]
    labels[ignore] = IGNORE
    matched[pos] = best[pos]
    if pos.any():
        box_t[pos] = encode_deltas(gts[best[pos]], props[pos])
        for i in np.flatnonzero(pos):
            mask_t[i] = mask_grid(props[i], gts[best[i]], mask_size)
    return RoiTargets(labels, matched, box_t, mask_t, best_iou)


def assign_anchor_targets(anchors_xyxy: np.ndarray, gt_xyxy: np.ndarray,
                          pos_thresh: float = 0.7, neg_thresh: float = 0.3) -> Tuple[np.ndarray, np.ndarray]:
    """RPN labels (1 object, 0 background, -1 ignore) and regression targets.

    Besides the IoU rule, every GT box claims its highest-IoU anchors so that
    each object has at least one positive.
    """
    anchors = np.asarray(anchors_xyxy, dtype=np.float64)
    gts = np.asarray(gt_xyxy, dtype=np.float64).reshape(-1, 4)
    n = anchors.shape[0]
    labels = np.full(n, IGNORE, dtype=np.int64)
    targets = np.zeros((n, 4))
    if gts.shape[0] == 0:
        labels[:] = 0
        return labels, targets
    ious = iou_xyxy(anchors, gts)
    best = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best]
    labels[best_iou < neg_thresh] = 0
    gt_best = ious.max(axis=0)
    for g in range(gts.shape[0]):
        if gt_best[g] > 0:
            hits = np.flatnonzero(ious[:, g] == gt_best[g])
            labels[hits] = 1
            best[hits] = g
    labels[best_iou >= pos_thresh] = 1
    pos = labels == 1
    targets[pos] = encode_deltas(gts[best[pos]], anchors[pos])
    return labels, targets


def sample_labels(labels: np.ndarray, batch_size: int, positive_fraction: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Indices of a balanced subsample: up to ``batch_size * positive_fraction`` positives.

    Positives are labels > 0, negatives are label 0; ignored entries are never picked.
    """
    pos = np.flatnonzero(labels > 0)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), int(batch_size * positive_fraction))
    n_neg = min(len(neg), batch_size - n_pos)
    pick_pos = rng.permutation(pos)[:n_pos]
    pick_neg = rng.permutation(neg)[:n_neg]
    return np.sort(np.concatenate([pick_pos, pick_neg]))
