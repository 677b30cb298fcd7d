from .anchors import AnchorGrid, default_scales, make_anchor_grid
from .boxes import Proposal, apply_deltas, decode_boxes, encode_box, encode_deltas, iou_xyxy
from .head import CLASS_NAMES, NUM_CLASSES, DetectionHead, DetectionOutput, head_forward
from .nms import nms, nms_indices
from .roi import roi_pool, roi_pool_proposal
from .rpn import RPN, propose, rpn_forward
from .targets import assign_anchor_targets, assign_targets, sample_labels

__all__ = [
    "AnchorGrid", "default_scales", "make_anchor_grid", "Proposal", "apply_deltas", "decode_boxes",
    "encode_box", "encode_deltas", "iou_xyxy", "CLASS_NAMES", "NUM_CLASSES", "DetectionHead",
    "DetectionOutput", "head_forward", "nms", "nms_indices", "roi_pool", "roi_pool_proposal", "RPN",
    "propose", "rpn_forward", "assign_anchor_targets", "assign_targets", "sample_labels",
]
