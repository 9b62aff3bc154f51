"""Crossing classification metrics and future-location (FOL) metrics."""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from sklearn.metrics import accuracy_score, f1_score, precision_score, recall_score, roc_auc_score

from src.datamodel import BoxTrack

THRESHOLD = 0.5


@dataclass
class MetricsReport:
    acc: float
    auc: Optional[float]
    f1: float
    precision: float
    recall: float
    n_samples: int
    T: int
    tau: int
    P: int
    mode: str
    aiou: Optional[float] = None
    fiou: Optional[float] = None
    ade: Optional[float] = None
    fde: Optional[float] = None

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, values):
        return cls(**values)


def roc_auc(scores, labels):
    """ROC AUC; tied scores earn half credit. None when only one class is present"""
    labels = np.asarray(labels).astype(int)
    if len(np.unique(labels)) < 2:
        return None
    return float(roc_auc_score(labels, np.asarray(scores, dtype=np.float64)))


def classification_metrics(scores, labels):
    """(acc, auc, f1, precision, recall) of crossing scores thresholded at 0.5.

    auc is None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    if len(scores) == 0:
        raise ValueError("Classification metrics need at least one sample")
    predicted = (scores >= THRESHOLD).astype(int)
    auc = roc_auc(scores, labels)
    if auc is None:
        logging.warning(f"AUC undefined: only class {labels[0]} present in {len(labels)} samples")
    return (
        float(accuracy_score(labels, predicted)),
        auc,
        float(f1_score(labels, predicted, zero_division=0)),
        float(precision_score(labels, predicted, zero_division=0)),
        float(recall_score(labels, predicted, zero_division=0)),
    )


def _as_boxes(track):
    if isinstance(track, BoxTrack):
        return track.to_array().astype(np.float64)
    return np.asarray(track, dtype=np.float64)


def box_iou(a, b):
    """Elementwise IoU of (..., 4) normalized (x, y, w, h) arrays; empty overlaps give 0"""
    a_x1, a_x2 = a[..., 0] - a[..., 2] / 2, a[..., 0] + a[..., 2] / 2
    a_y1, a_y2 = a[..., 1] - a[..., 3] / 2, a[..., 1] + a[..., 3] / 2
    b_x1, b_x2 = b[..., 0] - b[..., 2] / 2, b[..., 0] + b[..., 2] / 2
    b_y1, b_y2 = b[..., 1] - b[..., 3] / 2, b[..., 1] + b[..., 3] / 2
    inter = (np.clip(np.minimum(a_x2, b_x2) - np.maximum(a_x1, b_x1), 0, None)
             * np.clip(np.minimum(a_y2, b_y2) - np.maximum(a_y1, b_y1), 0, None))
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((union > 0) & (inter > 0), inter / union, 0.0)
    return np.minimum(ratio, 1.0)


def fol_metrics(pred, gt, frame_size):
    """(aiou, fiou, ade, fde) for one (P, 4) track pair or a batch (N, P, 4).

    IoU in percent, displacements in pixels of a (W, H) frame; batches are
    averaged over clips.
    """
    pred, gt = _as_boxes(pred), _as_boxes(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"Predicted track {pred.shape[:-1]} and ground truth {gt.shape[:-1]} differ in length")
    if pred.shape[-1] != 4 or pred.ndim not in (2, 3) or pred.shape[-2] == 0:
        raise ValueError(f"Expected (P, 4) or (N, P, 4) box tracks, got {pred.shape}")
    width, height = frame_size
    if width <= 0 or height <= 0:
        raise ValueError(f"frame_size must be positive, got {frame_size}")

    ious = box_iou(pred, gt)
    scale = np.array([width, height], dtype=np.float64)
    distances = np.linalg.norm((pred[..., :2] - gt[..., :2]) * scale, axis=-1)
    return (
        float(ious.mean() * 100),
        float(ious[..., -1].mean() * 100),
        float(distances.mean()),
        float(distances[..., -1].mean()),
    )


def build_report(scores, labels, T, tau, P, mode, fol=None):
    """MetricsReport from raw scores; fol is an optional (pred, gt, frame_size) triple"""
    acc, auc, f1, precision, recall = classification_metrics(scores, labels)
    report = MetricsReport(acc=acc, auc=auc, f1=f1, precision=precision, recall=recall,
                           n_samples=len(labels), T=T, tau=tau, P=P, mode=mode)
    if fol is not None:
        report.aiou, report.fiou, report.ade, report.fde = fol_metrics(*fol)
    return report
