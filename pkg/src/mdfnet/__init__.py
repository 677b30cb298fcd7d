"""Dual-fusion multimodal abnormality detection on a from-scratch numpy autodiff core."""
__version__ = "0.1.0"
