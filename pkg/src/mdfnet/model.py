"""The dual-fusion detector and its single-fusion / image-only ablation modes."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import Backbone, BackboneConfig, DESK_FINE_BACKBONE, Fusion, FusionMethod
from .clinical import ALL_FEATURES, EMBEDDING_WIDTH, ClinicalEncoder, ClinicalRecord, NormalizationStats, \
    SpatialisationStack
from .detection.anchors import AnchorGrid, default_scales, make_anchor_grid
from .detection.boxes import apply_deltas, xywh_to_xyxy, xyxy_to_xywh
from .detection.head import NUM_CLASSES, DetectionHead
from .detection.nms import nms_indices
from .detection.roi import roi_pool
from .detection.rpn import RPN, propose
from .detection.targets import assign_anchor_targets, assign_targets, sample_labels
from .structures import Detection
from .losses import DetectorPredictions, DetectorTargets, LossTerms, compute_losses
from .tensor import Tensor, no_grad, ops
from .tensor.nn import Module
from .tensor.ops import log_softmax


class Mode(str, enum.Enum):
    """Which fusion paths are active."""

    BASELINE = "baseline"   # image only
    MSF_1D = "msf1d"        # clinical vector joins the classifier only
    MSF_3D = "msf3d"        # spatialised clinical map fused before the RPN only
    MDF = "mdf"             # both

    @property
    def fuse_3d(self) -> bool:
        return self in (Mode.MSF_3D, Mode.MDF)

    @property
    def fuse_1d(self) -> bool:
        return self in (Mode.MSF_1D, Mode.MDF)

    @property
    def uses_clinical(self) -> bool:
        return self is not Mode.BASELINE

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mode {value!r}; choose from {[m.value for m in cls]}") from None


@dataclass
class ModelConfig:
    mode: str = "mdf"
    fusion: str = "sum"
    image_size: int = 64
    spatialisation_layers: int = 6
    spatialisation_channels: int = 8
    backbone: BackboneConfig = field(default_factory=lambda: DESK_FINE_BACKBONE)
    features: Tuple[str, ...] = ALL_FEATURES
    embedding_width: int = EMBEDDING_WIDTH
    impute: str = "reject"
    anchor_scales: Optional[Tuple[float, ...]] = None
    anchor_ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)
    rpn_pre_nms_top: int = 200
    rpn_post_nms_top: int = 50
    rpn_nms_thresh: float = 0.7
    rpn_pos_thresh: float = 0.7
    rpn_neg_thresh: float = 0.3
    rpn_batch: int = 64
    rpn_positive_fraction: float = 0.5
    fg_thresh: float = 0.5
    bg_thresh: float = 0.3
    roi_batch: int = 32
    roi_positive_fraction: float = 0.25
    roi_pool_size: int = 7
    mask_size: int = 14
    head_hidden: int = 256
    det_nms_thresh: float = 0.5
    det_score_thresh: float = 0.05
    max_detections: int = 100

    def __post_init__(self):
        self.mode = Mode.parse(self.mode).value
        self.fusion = FusionMethod.parse(self.fusion).value
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig.from_dict(self.backbone)
        self.features = tuple(self.features)
        if self.mode == Mode.BASELINE.value:
            if tuple(self.features) != ALL_FEATURES:
                raise ValueError("baseline mode does not read clinical data; a feature subset is not allowed")
        elif not self.features:
            raise ValueError("clinical modes need a non-empty feature subset")
        if 2 ** self.spatialisation_layers != self.image_size:
            raise ValueError(f"2**e = {2 ** self.spatialisation_layers} must equal the image size {self.image_size}")
        self.backbone.output_hw(self.image_size)
        if self.anchor_scales is not None:
            self.anchor_scales = tuple(float(s) for s in self.anchor_scales)
        self.anchor_ratios = tuple(float(r) for r in self.anchor_ratios)

    @property
    def feature_hw(self) -> int:
        return self.backbone.output_hw(self.image_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        d["features"] = list(self.features)
        d["anchor_scales"] = None if self.anchor_scales is None else list(self.anchor_scales)
        d["anchor_ratios"] = list(self.anchor_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "backbone" in d and isinstance(d["backbone"], dict):
            d["backbone"] = BackboneConfig.from_dict(d["backbone"])
        for k in ("features", "anchor_ratios"):
            if k in d:
                d[k] = tuple(d[k])
        if d.get("anchor_scales") is not None:
            d["anchor_scales"] = tuple(d["anchor_scales"])
        return cls(**d)


@dataclass
class Batch:
    images: np.ndarray                          # (B, 1, S, S) in [0, 1]
    records: Sequence[ClinicalRecord]
    gt_boxes: List[np.ndarray]                  # per image (G, 4) xywh
    gt_labels: List[np.ndarray]                 # per image (G,) in 1..5


class MDFNet(Module):
    def __init__(self, cfg: ModelConfig, stats: Optional[NormalizationStats], seed: int = 0):
        self.cfg = cfg
        self.mode = Mode.parse(cfg.mode)
        rng = np.random.default_rng(seed)
        bb = cfg.backbone
        D = bb.out_channels
        self.cxr_backbone = Backbone(rng, bb)
        if self.mode.uses_clinical:
            if stats is None:
                raise ValueError("clinical modes need normalization statistics")
            self.encoder = ClinicalEncoder(stats, rng, cfg.features, cfg.embedding_width, cfg.impute)
            n = self.encoder.output_size
        else:
            self.encoder = None
            n = 0
        if self.mode.fuse_3d:
            self.spatialiser = SpatialisationStack(rng, n, cfg.spatialisation_layers, bb.in_channels,
                                                   cfg.spatialisation_channels, cfg.image_size)
            self.clinical_backbone = Backbone(rng, bb)
        self.fusion = Fusion(rng, D, FusionMethod.parse(cfg.fusion))
        scales = cfg.anchor_scales or default_scales(cfg.image_size)
        fh = cfg.feature_hw
        self.anchors: AnchorGrid = make_anchor_grid((fh, fh), cfg.image_size, scales, cfg.anchor_ratios)
        self.rpn = RPN(rng, D, self.anchors.per_cell)
        self.head = DetectionHead(rng, D, cfg.roi_pool_size, n, self.mode.fuse_1d, cfg.head_hidden, NUM_CLASSES)
        self.spatial_scale = fh / cfg.image_size

    # -- shared trunk -----------------------------------------------------
    def trunk(self, images: np.ndarray, records) -> Tuple[Tensor, Optional[Tensor], Dict[str, Tensor]]:
        """Fused feature map, clinical vector for the head (or None), and intermediates."""
        x = Tensor(images)
        inter: Dict[str, Tensor] = {}
        image_map = self.cxr_backbone(x)
        inter["image_map"] = image_map
        z = None
        clinical_map = None
        if self.mode.uses_clinical:
            z = self.encoder(records)
            inter["z"] = z
            if self.mode.fuse_3d:
                s = self.spatialiser(z)
                inter["pseudo_image"] = s
                clinical_map = self.clinical_backbone(s)
                inter["clinical_map"] = clinical_map
        fused = self.fusion(clinical_map, image_map)
        inter["fused"] = fused
        return fused, (z if self.mode.fuse_1d else None), inter

    def _head_inputs(self, fused: Tensor, z: Optional[Tensor], rois: np.ndarray, bidx: np.ndarray):
        pooled = roi_pool(fused, rois, bidx, (self.cfg.roi_pool_size,) * 2, self.spatial_scale)
        zr = ops.take_rows(z, bidx) if z is not None else None
        return pooled, zr

    # -- training ---------------------------------------------------------
    def loss_terms(self, batch: Batch, rng: np.random.Generator,
                   proposals: Optional[List[np.ndarray]] = None) -> Tuple[LossTerms, dict]:
        """Five loss terms for one batch.

        Proposal coordinates are treated as constants (no gradient flows back
        through the box decoding into the RPN). ``proposals`` (per image, xyxy)
        overrides the RPN output, which makes the loss a smooth function of the
        weights for finite-difference checks. ``info["proposals"]`` returns the
        ones actually used.
        """
        cfg = self.cfg
        fused, z, _ = self.trunk(batch.images, batch.records)
        B = fused.shape[0]
        logits, deltas = self.rpn(fused)
        A = len(self.anchors)

        rpn_sel, rpn_lab, rpn_pos, rpn_tgt = [], [], [], []
        rois, roi_b, roi_lab, pos_rows, pos_cls, box_t, mask_t = [], [], [], [], [], [], []
        used: List[np.ndarray] = []
        n_roi = 0
        for b in range(B):
            gt = xywh_to_xyxy(batch.gt_boxes[b]).reshape(-1, 4)
            labels, targets = assign_anchor_targets(self.anchors.boxes, gt, cfg.rpn_pos_thresh, cfg.rpn_neg_thresh)
            pick = sample_labels(labels, cfg.rpn_batch, cfg.rpn_positive_fraction, rng)
            rpn_sel.append(b * A + pick)
            rpn_lab.append(labels[pick])
            pos = pick[labels[pick] == 1]
            rpn_pos.append(b * A + pos)
            rpn_tgt.append(targets[pos])

            if proposals is None:
                props, _ = propose(logits.data[b], deltas.data[b], self.anchors, cfg.image_size,
                                   cfg.rpn_pre_nms_top, cfg.rpn_post_nms_top, cfg.rpn_nms_thresh)
            else:
                props = np.asarray(proposals[b], dtype=np.float64).reshape(-1, 4)
            used.append(props)
            cand = np.concatenate([props, gt], axis=0)
            t = assign_targets(cand, gt, batch.gt_labels[b], cfg.fg_thresh, cfg.bg_thresh, cfg.mask_size)
            keep = sample_labels(t.labels, cfg.roi_batch, cfg.roi_positive_fraction, rng)
            rois.append(cand[keep])
            roi_b.append(np.full(len(keep), b))
            roi_lab.append(t.labels[keep])
            p = np.flatnonzero(t.labels[keep] > 0)
            pos_rows.append(n_roi + p)
            pos_cls.append(t.labels[keep][p])
            box_t.append(t.box_targets[keep][p])
            mask_t.append(t.mask_targets[keep][p])
            n_roi += len(keep)

        flat_logits = ops.reshape(logits, (B * A,))
        flat_deltas = ops.reshape(deltas, (B * A, 4))
        rpn_sel = np.concatenate(rpn_sel)
        rpn_pos = np.concatenate(rpn_pos)
        rois = np.concatenate(rois)
        roi_b = np.concatenate(roi_b).astype(np.int64)
        pos_rows = np.concatenate(pos_rows).astype(np.int64)
        pos_cls = np.concatenate(pos_cls).astype(np.int64)

        pooled, zr = self._head_inputs(fused, z, rois, roi_b)
        cls_logits, box_deltas, mask_logits = self.head(pooled, zr)
        preds = DetectorPredictions(
            cls_logits=cls_logits,
            box_deltas=ops.select(box_deltas, (pos_rows, pos_cls)),
            mask_logits=ops.select(mask_logits, (pos_rows, pos_cls - 1)),
            rpn_logits=ops.take_rows(flat_logits, rpn_sel),
            rpn_deltas=ops.take_rows(flat_deltas, rpn_pos),
        )
        tgts = DetectorTargets(
            cls_labels=np.concatenate(roi_lab),
            box_targets=np.concatenate(box_t).reshape(-1, 4),
            mask_targets=np.concatenate(mask_t).reshape(-1, cfg.mask_size, cfg.mask_size),
            rpn_labels=np.concatenate(rpn_lab),
            rpn_targets=np.concatenate(rpn_tgt).reshape(-1, 4),
        )
        terms = compute_losses(preds, tgts)
        return terms, {"n_rois": int(n_roi), "n_pos_rois": int(pos_rows.size), "n_pos_anchors": int(rpn_pos.size),
                       "proposals": used}

    # -- inference --------------------------------------------------------
    def detect(self, images: np.ndarray, records, score_thresh: Optional[float] = None) -> List[List[Detection]]:
        cfg = self.cfg
        thresh = cfg.det_score_thresh if score_thresh is None else score_thresh
        with no_grad():
            fused, z, _ = self.trunk(images, records)
            logits, deltas = self.rpn(fused)
            B = fused.shape[0]
            props, bidx = [], []
            for b in range(B):
                p, _ = propose(logits.data[b], deltas.data[b], self.anchors, cfg.image_size,
                               cfg.rpn_pre_nms_top, cfg.rpn_post_nms_top, cfg.rpn_nms_thresh)
                props.append(p)
                bidx.append(np.full(len(p), b))
            rois = np.concatenate(props).reshape(-1, 4)
            roi_b = np.concatenate(bidx).astype(np.int64)
            out: List[List[Detection]] = [[] for _ in range(B)]
            if rois.shape[0] == 0:
                return out
            pooled, zr = self._head_inputs(fused, z, rois, roi_b)
            cls_logits, box_deltas, _ = self.head(pooled, zr)
        scores = np.exp(log_softmax(cls_logits, axis=1).data)
        for b in range(B):
            rows = np.flatnonzero(roi_b == b)
            dets: List[Detection] = []
            for c in range(1, NUM_CLASSES):
                sc = scores[rows, c]
                ok = sc > thresh
                if not ok.any():
                    continue
                boxes = apply_deltas(rois[rows][ok], box_deltas.data[rows[ok], c], (cfg.image_size,) * 2)
                wh = boxes[:, 2:] - boxes[:, :2]
                good = (wh > 0).all(axis=1)
                boxes, sc_ok = boxes[good], sc[ok][good]
                keep = nms_indices(boxes, sc_ok, cfg.det_nms_thresh)
                for k in keep:
                    x, y, w, h = (float(v) for v in xyxy_to_xywh(boxes[k]))
                    dets.append(Detection(c, float(sc_ok[k]), x, y, w, h, image_id=b))
            dets.sort(key=lambda d: -d.score)
            out[b] = dets[:cfg.max_detections]
        return out
