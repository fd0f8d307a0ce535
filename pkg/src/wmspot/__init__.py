"""Synthetic watermark text patterns for document pages, with rotated-box
evaluation metrics and the loss/attention kernels of a watermark spotter."""

from ._backend import BACKEND
from .geometry import RotatedBox, rotated_iou
from .kernels import variance_loss
from .metrics import DetectionPrediction, char_accuracy, evaluate, majority_vote
from .render import FontCatalog, PageAnnotation, wrender_page
from .sampling import PageParams, Rng, sample_page_params

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DetectionPrediction",
    "FontCatalog",
    "PageAnnotation",
    "PageParams",
    "Rng",
    "RotatedBox",
    "char_accuracy",
    "evaluate",
    "majority_vote",
    "rotated_iou",
    "sample_page_params",
    "variance_loss",
    "wrender_page",
]
