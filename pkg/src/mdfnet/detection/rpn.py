from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.nn import Conv2d, Module
from ..tensor.ops import stable_sigmoid
from .anchors import AnchorGrid
from .boxes import Proposal, apply_deltas, xyxy_to_xywh
from .nms import nms_indices


class RPN(Module):
    """3x3 conv + ReLU, then 1x1 objectness (K maps) and 1x1 box deltas (4K maps)."""

    def __init__(self, rng: np.random.Generator, channels: int, anchors_per_cell: int):
        self.k = anchors_per_cell
        self.conv = Conv2d(rng, channels, channels, kernel=3, padding=1)
        self.objectness = Conv2d(rng, channels, anchors_per_cell, kernel=1)
        self.deltas = Conv2d(rng, channels, 4 * anchors_per_cell, kernel=1)

    def __call__(self, fused: Tensor) -> Tuple[Tensor, Tensor]:
        """Objectness logits (B, H*W*K) and deltas (B, H*W*K, 4), in anchor-grid order."""
        B, _, H, W = fused.shape
        h = ops.relu(self.conv(fused))
        logits = ops.transpose(self.objectness(h), (0, 2, 3, 1))
        logits = ops.reshape(logits, (B, H * W * self.k))
        d = ops.reshape(self.deltas(h), (B, self.k, 4, H, W))
        d = ops.reshape(ops.transpose(d, (0, 3, 4, 1, 2)), (B, H * W * self.k, 4))
        return logits, d


def propose(logits: np.ndarray, deltas: np.ndarray, anchors: AnchorGrid, image_size: int,
            pre_nms_top: int = 200, post_nms_top: int = 50, nms_thresh: float = 0.7,
            min_size: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Turn one image's raw RPN outputs into clipped, NMS-filtered proposals.

    Returns ``(boxes_xyxy, scores)`` sorted by descending objectness; equal
    scores keep anchor-index order.
    """
    if len(anchors) == 0:
        raise ValueError("empty anchor grid")
    if logits.shape[0] != len(anchors):
        raise ValueError(f"{logits.shape[0]} objectness logits for {len(anchors)} anchors")
    boxes = apply_deltas(anchors.boxes, deltas, (image_size, image_size))
    scores = stable_sigmoid(logits)
    wh = boxes[:, 2:] - boxes[:, :2]
    valid = np.flatnonzero((wh >= min_size).all(axis=1))
    order = valid[np.argsort(-scores[valid], kind="stable")][:pre_nms_top]
    keep = nms_indices(boxes[order], scores[order], nms_thresh)[:post_nms_top]
    idx = order[keep]
    return boxes[idx], scores[idx]


def rpn_forward(fused: Tensor, anchors: AnchorGrid, rpn: RPN, image_size: int,
                pre_nms_top: int = 200, post_nms_top: int = 50, nms_thresh: float = 0.7) -> List[List[Proposal]]:
    """Proposals per image as :class:`Proposal` records."""
    if fused.shape[2:] != anchors.feature_hw:
        raise ValueError(f"anchors built for {anchors.feature_hw}, fused map is {fused.shape[2:]}")
    logits, deltas = rpn(fused)
    out = []
    for b in range(fused.shape[0]):
        boxes, scores = propose(logits.data[b], deltas.data[b], anchors, image_size,
                                pre_nms_top, post_nms_top, nms_thresh)
        out.append([Proposal(*xyxy_to_xywh(bx), c_obj=float(s)) for bx, s in zip(boxes, scores)])
    return out
