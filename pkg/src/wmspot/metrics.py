"""Detection and recognition metrics for watermark text spotting.

Detection follows COCO conventions for a single class: greedy score-ordered
matching at each IoU threshold, 101-point interpolated AP, thresholds
0.50:0.05:0.95. Recognition uses Levenshtein character accuracy.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .errors import DataError, ParameterError
from .geometry import RotatedBox, iou_matrix
from .kernels import variance_loss

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_LEVELS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class DetectionPrediction:
    box: RotatedBox
    score: float = 1.0
    text: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ParameterError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        d = self.box.to_dict()
        d["score"] = self.score
        if self.text is not None:
            d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DetectionPrediction":
        text = data.get("text")
        return cls(RotatedBox.from_dict(data), float(data.get("score", 1.0)), None if text is None else str(text))


@dataclass
class PageEval:
    """Predictions and ground truth for one page of size ``width x height``."""

    predictions: Sequence[DetectionPrediction]
    truths: Sequence[RotatedBox]
    width: float = 1.0
    height: float = 1.0


@dataclass
class EvalReport:
    mAP: float
    AP50: float
    AP75: float
    mAR: float
    AR50: float
    AR75: float
    ap_per_threshold: dict[float, float] = field(default_factory=dict)
    ar_per_threshold: dict[float, float] = field(default_factory=dict)
    vacuous: bool = False

    def headline(self) -> dict[str, float]:
        return {
            "mAP": self.mAP, "AP@50": self.AP50, "AP@75": self.AP75,
            "mAR": self.mAR, "AR@50": self.AR50, "AR@75": self.AR75,
        }

    def to_dict(self) -> dict:
        return {
            **self.headline(),
            "ap_per_threshold": {f"{k:.2f}": v for k, v in self.ap_per_threshold.items()},
            "ar_per_threshold": {f"{k:.2f}": v for k, v in self.ar_per_threshold.items()},
            "vacuous": self.vacuous,
        }


def _score_order(preds: Sequence[DetectionPrediction]) -> list[int]:
    # stable: ties keep insertion order
    return sorted(range(len(preds)), key=lambda i: -preds[i].score)


def match_detections(
    preds: Sequence[DetectionPrediction],
    truths: Sequence[RotatedBox],
    iou_threshold: float = 0.5,
    width: float = 1.0,
    height: float = 1.0,
    ious: np.ndarray | None = None,
) -> list[int | None]:
    """Greedy one-to-one matching; entry ``i`` is the truth index matched by prediction ``i``.

    Predictions are visited by descending score and take the unmatched truth
    of highest IoU (lowest index on ties) provided it reaches the threshold.
    """
    result: list[int | None] = [None] * len(preds)
    if not preds or not truths:
        return result
    if ious is None:
        ious = iou_matrix([p.box for p in preds], truths, width, height)
    taken = np.zeros(len(truths), dtype=bool)
    for i in _score_order(preds):
        row = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= iou_threshold and not taken[j]:
            taken[j] = True
            result[i] = j
    return result


def _interpolated_ap(tp_flags: np.ndarray, n_truth: int) -> float:
    if n_truth == 0 or tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_truth
    precision = tp / (tp + fp)
    # precision envelope, then sample at the 101 recall levels
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    sampled = np.zeros_like(RECALL_LEVELS)
    ok = idx < envelope.size
    sampled[ok] = envelope[idx[ok]]
    return float(sampled.mean())


def _collect(pages: Sequence[PageEval], iou_threshold: float, ious_by_page: list[np.ndarray]):
    scores, flags = [], []
    n_truth = 0
    for page, ious in zip(pages, ious_by_page):
        matches = match_detections(page.predictions, page.truths, iou_threshold, ious=ious)
        n_truth += len(page.truths)
        for pred, m in zip(page.predictions, matches):
            scores.append(pred.score)
            flags.append(m is not None)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return np.asarray(flags, dtype=bool)[order], n_truth


def _page_ious(pages: Sequence[PageEval]) -> list[np.ndarray]:
    return [
        iou_matrix([p.box for p in page.predictions], list(page.truths), page.width, page.height)
        for page in pages
    ]


def average_precision(
    preds: Sequence[DetectionPrediction],
    truths: Sequence[RotatedBox],
    iou_threshold: float = 0.5,
    width: float = 1.0,
    height: float = 1.0,
) -> float:
    """101-point interpolated AP for one page."""
    pages = [PageEval(preds, truths, width, height)]
    flags, n_truth = _collect(pages, iou_threshold, _page_ious(pages))
    return _interpolated_ap(flags, n_truth)


def evaluate(pages: Sequence[PageEval], thresholds: Sequence[float] = IOU_THRESHOLDS) -> EvalReport:
    """AP/AR over all pages at each threshold, plus the COCO-style averages.

    With no ground truth and no predictions anywhere, every metric is 1.0 and
    ``vacuous`` is set; with no ground truth but some predictions, all are 0.
    """
    thresholds = list(thresholds)
    n_truth = sum(len(p.truths) for p in pages)
    n_pred = sum(len(p.predictions) for p in pages)
    if n_truth == 0:
        value = 1.0 if n_pred == 0 else 0.0
        per = {t: value for t in thresholds}
        return EvalReport(value, value, value, value, value, value, per, dict(per), vacuous=n_pred == 0)
    ious = _page_ious(pages)
    ap, ar = {}, {}
    for t in thresholds:
        flags, _ = _collect(pages, t, ious)
        ap[t] = _interpolated_ap(flags, n_truth)
        ar[t] = float(flags.sum()) / n_truth

    def at(table, t):
        return table[t] if t in table else float("nan")

    return EvalReport(
        mAP=float(np.mean(list(ap.values()))),
        AP50=at(ap, 0.5),
        AP75=at(ap, 0.75),
        mAR=float(np.mean(list(ar.values()))),
        AR50=at(ar, 0.5),
        AR75=at(ar, 0.75),
        ap_per_threshold=ap,
        ar_per_threshold=ar,
    )


def edit_counts(pred: str, truth: str) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) turning ``truth`` into ``pred``."""
    return _backend.edit_counts(pred, truth)


def char_accuracy(pred: str, truth: str) -> float:
    """``1 - (S + D + I) / len(truth)``, floored at 0."""
    if not truth:
        raise ParameterError("character accuracy needs a non-empty reference")
    s, d, i = edit_counts(pred, truth)
    return max(0.0, 1.0 - (s + d + i) / len(truth))


def majority_vote(texts: Sequence[str]) -> str:
    """Most frequent string; ties go to the lexicographically smallest."""
    if not texts:
        raise ParameterError("majority vote over an empty list")
    counts = Counter(texts)
    return min(counts, key=lambda s: (-counts[s], s))


def prediction_set_difference(
    post_preds: Sequence[DetectionPrediction],
    pre_preds: Sequence[DetectionPrediction],
    iou_threshold: float = 0.5,
    width: float = 1.0,
    height: float = 1.0,
) -> list[DetectionPrediction]:
    """Predictions on the watermarked page with no IoU >= threshold partner on the clean page."""
    if not pre_preds:
        return list(post_preds)
    if not post_preds:
        return []
    ious = iou_matrix([p.box for p in post_preds], [p.box for p in pre_preds], width, height)
    keep = ious.max(axis=1) < iou_threshold
    return [p for p, k in zip(post_preds, keep) if k]


def variance_consistency_score(preds: Sequence[DetectionPrediction]) -> float:
    """Variance loss of the predicted boxes: 0 when all share width, height and angle."""
    if not preds:
        raise ParameterError("variance consistency needs at least one prediction")
    return variance_loss([p.box for p in preds])


def document_accuracy(pred: str | None, truth: str) -> float:
    return 0.0 if pred is None else char_accuracy(pred, truth)


PREDICTIONS_SCHEMA = 1


@dataclass
class PagePredictions:
    """One page of a predictions file; ``text`` is an optional document-level answer."""

    image_id: str
    predictions: list[DetectionPrediction]
    text: str | None = None

    def to_dict(self) -> dict:
        d = {"image_id": self.image_id, "predictions": [p.to_dict() for p in self.predictions]}
        if self.text is not None:
            d["text"] = self.text
        return d


def load_predictions(path) -> dict[str, PagePredictions]:
    """Read a predictions file: ``{"schema_version": 1, "pages": [...]}`` or a bare page list."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        pages = raw["pages"] if isinstance(raw, dict) else raw
        out: dict[str, PagePredictions] = {}
        for page in pages:
            image_id = str(page["image_id"])
            if image_id in out:
                raise DataError(f"duplicate image_id {image_id!r} in predictions")
            text = page.get("text")
            out[image_id] = PagePredictions(
                image_id,
                [DetectionPrediction.from_dict(p) for p in page.get("predictions", [])],
                None if text is None else str(text),
            )
    except FileNotFoundError:
        raise DataError(f"predictions file not found: {path}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt predictions file {path}: {exc}") from None
    return out


def write_predictions(path, pages: Sequence[PagePredictions]) -> None:
    doc = {"schema_version": PREDICTIONS_SCHEMA, "pages": [p.to_dict() for p in pages]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
