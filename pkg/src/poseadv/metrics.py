"""Attack success rate, average precision and total variation."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .detector import BBox, Detection, iou
from .errors import DomainError

__all__ = ["asr", "detected", "map_metric", "physical_asr", "total_variation"]

Frame = tuple[Sequence[Detection], "BBox | None"]


def detected(dets: Sequence[Detection], gt: BBox | None, tau_iou: float = 0.5,
             tau_conf: float = 0.5, label: str = "person") -> bool:
    """True if some box of the label beats both thresholds (strict) against gt."""
    if gt is None:
        return False
    return any(d.label == label and d.conf > tau_conf and iou(d.bbox, gt) > tau_iou for d in dets)


def asr(frames: Sequence[Frame], tau_iou: float = 0.5, tau_conf: float = 0.5,
        label: str = "person") -> float:
    """Fraction of frames with no qualifying detection."""
    if len(frames) == 0:
        raise DomainError("ASR needs at least one frame")
    hits = sum(detected(d, gt, tau_iou, tau_conf, label) for d, gt in frames)
    # (n - hits) / n is correctly rounded; 1 - hits / n is not
    return (len(frames) - hits) / len(frames)


def physical_asr(n_detected: int, n_total: int) -> float:
    """Success rate from counted frames; ``n_detected`` counts frames where the detector won."""
    if n_total <= 0 or not 0 <= n_detected <= n_total:
        raise DomainError("need 0 <= detected <= total and total > 0")
    return (n_total - n_detected) / n_total


def map_metric(frames: Sequence[Frame], tau_iou: float = 0.5, label: str = "person") -> float:
    """Single-class AP with 101-point interpolated precision.

    Detections from all frames are pooled and sorted by confidence (stable,
    so ties keep frame then list order).  Each is greedily matched to its
    frame's gt box if unclaimed and IoU > tau_iou.
    """
    if len(frames) == 0:
        raise DomainError("AP needs at least one frame")
    pool = [(d.conf, f, d) for f, (dets, _) in enumerate(frames) for d in dets if d.label == label]
    n_gt = sum(gt is not None for _, gt in frames)
    if n_gt == 0 or not pool:
        return 0.0
    order = sorted(range(len(pool)), key=lambda i: -pool[i][0])
    claimed = np.zeros(len(frames), dtype=bool)
    tp = np.zeros(len(pool))
    for rank, i in enumerate(order):
        _, f, d = pool[i]
        gt = frames[f][1]
        if gt is not None and not claimed[f] and iou(d.bbox, gt) > tau_iou:
            claimed[f] = True
            tp[rank] = 1.0
    ctp = np.cumsum(tp).astype(np.int64)
    precision = ctp / np.arange(1, len(pool) + 1)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for i in range(101):
        # recall >= i/100, compared in integers so grid points are hit exactly
        k = np.searchsorted(100 * ctp, i * n_gt, side="left")
        ap += envelope[k] if k < len(ctp) else 0.0
    return float(ap / 101)


def total_variation(image) -> float:
    """Isotropic TV: L2 colour difference summed over neighbour pairs, per pixel."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise DomainError("total variation needs an image of at least 2x2")
    dx = np.sqrt(np.sum(np.diff(img, axis=1) ** 2, axis=-1)).sum()
    dy = np.sqrt(np.sum(np.diff(img, axis=0) ** 2, axis=-1)).sum()
    return float((dx + dy) / (img.shape[0] * img.shape[1]))
