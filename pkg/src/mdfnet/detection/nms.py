from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .boxes import Proposal, iou_xyxy, xywh_to_xyxy


def nms_indices(boxes_xyxy: np.ndarray, scores: np.ndarray, overlap_thresh: float) -> np.ndarray:
    """Greedy suppression; returns kept indices in descending score order.

    Ties in score are broken by the lower index.
    """
    if not 0 < overlap_thresh < 1:
        raise ValueError("overlap_thresh must lie in (0, 1)")
    n = len(scores)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-np.asarray(scores), kind="stable")
    boxes = np.asarray(boxes_xyxy, dtype=np.float64)[order]
    ious = iou_xyxy(boxes, boxes)
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in range(n):
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > overlap_thresh
    return order[np.array(keep, dtype=np.int64)]


def nms(boxes: Sequence[Proposal], overlap_thresh: float) -> List[Proposal]:
    if not boxes:
        if not 0 < overlap_thresh < 1:
            raise ValueError("overlap_thresh must lie in (0, 1)")
        return []
    xyxy = xywh_to_xyxy(np.array([b.xywh() for b in boxes]))
    keep = nms_indices(xyxy, np.array([b.c_obj for b in boxes]), overlap_thresh)
    return [boxes[i] for i in keep]
