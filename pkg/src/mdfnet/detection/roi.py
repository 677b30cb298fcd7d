"""RoIPool: max over a fixed grid of sub-windows of each proposal's footprint."""
from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.core import DTYPE
from .boxes import Proposal


def footprint(box_xyxy, spatial_scale: float, feat_hw: Tuple[int, int]) -> Tuple[int, int, int, int]:
    """Feature-map cell range ``(row0, row1, col0, col1)`` (half-open) covered by a box.

    Edges are floored/ceiled outward and clamped to the map; a degenerate box
    still gets one cell.
    """
    H, W = feat_hw
    x1, y1, x2, y2 = (float(v) * spatial_scale for v in box_xyxy)

    def span(lo, hi, n):
        a = min(max(int(math.floor(lo)), 0), n - 1)
        b = min(max(int(math.ceil(hi)), 0), n)
        if b <= a:
            b = a + 1
        return a, b

    r0, r1 = span(y1, y2, H)
    c0, c1 = span(x1, x2, W)
    return r0, r1, c0, c1


def bin_edges(start: int, length: int, bins: int) -> List[Tuple[int, int]]:
    """Split ``[start, start+length)`` into ``bins`` overlapping-at-most-one-cell windows."""
    return [(start + (k * length) // bins, start - ((-(k + 1) * length) // bins)) for k in range(bins)]


def roi_pool(features: Tensor, rois: np.ndarray, batch_index: np.ndarray,
             output_size: Tuple[int, int] = (7, 7), spatial_scale: float = 1.0) -> Tensor:
    """Pool ``rois`` (R, 4 xyxy image pixels) from ``features`` (B, D, H, W) to (R, D, Hr, Wr)."""
    feat = features.data
    B, D, H, W = feat.shape
    Hr, Wr = output_size
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    batch_index = np.asarray(batch_index, dtype=np.int64).reshape(-1)
    R = rois.shape[0]
    out = np.empty((R, D, Hr, Wr), dtype=DTYPE)
    arg_r = np.empty((R, D, Hr, Wr), dtype=np.int64)
    arg_c = np.empty((R, D, Hr, Wr), dtype=np.int64)
    for r in range(R):
        r0, r1, c0, c1 = footprint(rois[r], spatial_scale, (H, W))
        fm = feat[batch_index[r]]
        col_bins = bin_edges(c0, c1 - c0, Wr)
        row_bins = bin_edges(r0, r1 - r0, Hr)
        # separable max: first over columns of each column bin, then over rows
        colmax = np.empty((D, H, Wr))
        colarg = np.empty((D, H, Wr), dtype=np.int64)
        for j, (a, b) in enumerate(col_bins):
            blk = fm[:, :, a:b]
            colarg[:, :, j] = blk.argmax(axis=2) + a
            colmax[:, :, j] = np.take_along_axis(blk, (colarg[:, :, j] - a)[..., None], axis=2)[..., 0]
        for i, (a, b) in enumerate(row_bins):
            blk = colmax[:, a:b, :]
            ridx = blk.argmax(axis=1)
            out[r, :, i, :] = np.take_along_axis(blk, ridx[:, None, :], axis=1)[:, 0, :]
            arg_r[r, :, i, :] = ridx + a
            arg_c[r, :, i, :] = np.take_along_axis(colarg[:, a:b, :], ridx[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        dx = np.zeros_like(feat)
        bi = np.broadcast_to(batch_index[:, None, None, None], g.shape)
        di = np.broadcast_to(np.arange(D)[None, :, None, None], g.shape)
        np.add.at(dx, (bi, di, arg_r, arg_c), g)
        return (dx,)

    return Tensor._from_op(out, (features,), bw, "roi_pool")


def roi_pool_proposal(fused: Tensor, proposal: Proposal, out: Tuple[int, int] = (7, 7),
                      image_size: int | None = None, batch: int = 0) -> Tensor:
    """Single-proposal form returning (D, Hr, Wr)."""
    W = fused.shape[3]
    scale = 1.0 if image_size is None else W / image_size
    box = np.array([proposal.x, proposal.y, proposal.x + proposal.w, proposal.y + proposal.h])
    pooled = roi_pool(fused, box[None], np.array([batch]), out, scale)
    return ops.reshape(pooled, pooled.shape[1:])
