"""Detections, IoU, the detection loss and a small differentiable sliding-window detector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError

__all__ = [
    "BBox",
    "Detection",
    "ToyDetector",
    "detection_loss",
    "ensemble_loss",
    "iou",
    "person_detector",
    "select_detection",
    "toy_backward",
    "toy_forward",
]

EMIT_THRESHOLD = 0.01


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ConfigError(f"invalid box {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    conf: float
    label: str = "person"
    # window index for detections produced by ToyDetector, else -1
    index: int = -1

    def __post_init__(self):
        if not 0.0 <= self.conf <= 1.0:
            raise ConfigError(f"confidence {self.conf} outside [0, 1]")

    def to_dict(self) -> dict:
        b = self.bbox
        return {"x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2, "conf": self.conf, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(BBox(float(d["x1"]), float(d["y1"]), float(d["x2"]), float(d["y2"])),
                   float(d["conf"]), str(d["label"]))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _iou_many(boxes: np.ndarray, gt: BBox) -> np.ndarray:
    """IoU of gt against boxes (n, 4); same arithmetic as :func:`iou`."""
    iw = np.minimum(boxes[:, 2], gt.x2) - np.maximum(boxes[:, 0], gt.x1)
    ih = np.minimum(boxes[:, 3], gt.y2) - np.maximum(boxes[:, 1], gt.y1)
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) + gt.area - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def select_detection(dets: list[Detection], gt: BBox, label: str = "person") -> int | None:
    """Index of the target-label detection overlapping gt most (first on ties)."""
    best, best_iou = None, 0.0
    for i, d in enumerate(dets):
        if d.label != label:
            continue
        o = iou(d.bbox, gt)
        if o > best_iou:
            best, best_iou = i, o
    return best


def detection_loss(dets: list[Detection], gt: BBox, label: str = "person") -> float:
    """Confidence of the detection with the highest IoU against gt; 0 if none overlaps."""
    i = select_detection(dets, gt, label)
    return 0.0 if i is None else dets[i].conf


def ensemble_loss(losses, weights=None) -> float:
    losses = np.asarray(losses, dtype=float)
    weights = np.ones_like(losses) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != losses.shape:
        raise ConfigError("one weight per loss is required")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ConfigError("ensemble weights must be nonnegative with a positive sum")
    keep = weights > 0
    return float(np.sum(weights[keep] * losses[keep]) / weights[keep].sum())


@dataclass
class ToyDetector:
    """One linear template slid over the image; confidence = logistic(<window, template> + bias).

    The template may be rectangular, (Th, Tw, C).  Windows are enumerated
    row-major over stride-aligned top-left corners.
    """

    template: np.ndarray
    bias: float = 0.0
    stride: int = 1
    label: str = "person"

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=float)
        if self.template.ndim != 3:
            raise ConfigError("template must be (Th, Tw, C)")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")

    def _check(self, image):
        Th, Tw, C = self.template.shape
        if image.shape[0] < Th or image.shape[1] < Tw or image.shape[2] != C:
            raise ConfigError(f"image {image.shape} smaller than template {self.template.shape}")

    def grid(self, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        Th, Tw, _ = self.template.shape
        return np.arange(0, height - Th + 1, self.stride), np.arange(0, width - Tw + 1, self.stride)

    def boxes(self, height: int, width: int) -> np.ndarray:
        """Window extents (n, 4) in detection order."""
        Th, Tw, _ = self.template.shape
        ys, xs = self.grid(height, width)
        Y, X = np.meshgrid(ys, xs, indexing="ij")
        Y, X = Y.ravel().astype(float), X.ravel().astype(float)
        return np.stack([X, Y, X + Tw, Y + Th], axis=1)

    def scores(self, image: np.ndarray) -> np.ndarray:
        """Raw window scores, flat in detection order."""
        image = np.asarray(image, dtype=float)
        self._check(image)
        win = sliding_window_view(image, self.template.shape)[:: self.stride, :: self.stride, 0]
        # each window is summed as one contiguous row, same as window_scores
        rows = np.ascontiguousarray(win).reshape(-1, self.template.size)
        return (rows * self.template.ravel()).sum(axis=-1) + self.bias

    def window_order(self, gt: BBox, height: int, width: int) -> np.ndarray:
        """Window indices with IoU > 0 against gt, by IoU descending then index."""
        ov = _iou_many(self.boxes(height, width), gt)
        order = np.lexsort((np.arange(len(ov)), -ov))
        return order[ov[order] > 0]

    def window_scores(self, images: np.ndarray, windows) -> np.ndarray:
        """Scores of selected windows for a batch of images (B, H, W, C) -> (B, len(windows)).

        Bit-identical to :meth:`scores` whatever the batch size.
        """
        Th, Tw, _ = self.template.shape
        ys, xs = self.grid(images.shape[1], images.shape[2])
        nx = len(xs)
        flat = self.template.ravel()
        out = np.empty((images.shape[0], len(windows)))
        for j, w in enumerate(windows):
            y, x = ys[w // nx], xs[w % nx]
            rows = np.ascontiguousarray(images[:, y:y + Th, x:x + Tw]).reshape(images.shape[0], -1)
            out[:, j] = (rows * flat).sum(axis=-1) + self.bias
        return out

    def select_first(self, images: np.ndarray, order: np.ndarray, chunk: int = 8):
        """For each image, the first window along ``order`` that would be emitted.

        Returns (conf, window) arrays of length B; window is -1 and conf 0 where
        none is emitted.  With ``order = window_order(gt, ...)`` this is the
        detection the loss selects, without scoring every window.
        """
        B = images.shape[0]
        conf = np.zeros(B)
        window = np.full(B, -1)
        todo = np.arange(B)
        for start in range(0, len(order), chunk):
            if todo.size == 0:
                break
            ws = order[start:start + chunk]
            c = expit(self.window_scores(images[todo], ws))
            hit = c > EMIT_THRESHOLD
            found = hit.any(axis=1)
            first = hit.argmax(axis=1)
            idx = todo[found]
            conf[idx] = c[found, first[found]]
            window[idx] = ws[first[found]]
            todo = todo[~found]
        return conf, window

    def paste(self, window: int, height: int, width: int, scale: float = 1.0) -> np.ndarray:
        """``scale * template`` placed at a window, zeros elsewhere (H, W, C)."""
        Th, Tw, C = self.template.shape
        ys, xs = self.grid(height, width)
        y, x = ys[window // len(xs)], xs[window % len(xs)]
        out = np.zeros((height, width, C))
        out[y:y + Th, x:x + Tw] = scale * self.template
        return out

    def detect(self, image: np.ndarray) -> list[Detection]:
        return toy_forward(self, image)


def toy_forward(det: ToyDetector, image: np.ndarray) -> list[Detection]:
    image = np.asarray(image, dtype=float)
    conf = expit(det.scores(image))
    boxes = det.boxes(image.shape[0], image.shape[1])
    return [
        Detection(BBox(*boxes[i]), float(conf[i]), det.label, int(i))
        for i in np.flatnonzero(conf > EMIT_THRESHOLD)
    ]


def toy_backward(det: ToyDetector, image: np.ndarray, upstream) -> np.ndarray:
    """d(loss)/d(image) from d(loss)/d(conf) per window (flat, detection order)."""
    image = np.asarray(image, dtype=float)
    up = np.asarray(upstream, dtype=float).ravel()
    conf = expit(det.scores(image))
    dscore = up * conf * (1 - conf)
    grad = np.zeros_like(image)
    for w in np.flatnonzero(dscore):
        grad += det.paste(int(w), image.shape[0], image.shape[1], dscore[w])
    return grad


def toy_loss_and_grad(det: ToyDetector, image: np.ndarray, gt: BBox) -> tuple[float, np.ndarray]:
    """Detection loss of the toy detector and its exact image gradient."""
    dets = toy_forward(det, image)
    i = select_detection(dets, gt, det.label)
    if i is None:
        return 0.0, np.zeros_like(np.asarray(image, dtype=float))
    up = np.zeros(len(det.boxes(image.shape[0], image.shape[1])))
    up[dets[i].index] = 1.0
    return dets[i].conf, toy_backward(det, image, up)


# Default person template: a soft vertical band over the window's centre
# column, luminance weighted, with mild negative margins.  Gain and bias were
# calibrated once against the default scene distribution and then frozen.
PERSON_TEMPLATE = (24, 9)
PERSON_CHANNELS = (1.0, 0.9, 0.7)
PERSON_GAIN = 0.25
PERSON_BIAS = -7.5


def person_detector(height: int = PERSON_TEMPLATE[0], width: int = PERSON_TEMPLATE[1],
                    stride: int = 1, gain: float = PERSON_GAIN, bias: float = PERSON_BIAS) -> ToyDetector:
    x = (np.arange(width) + 0.5) / width - 0.5
    y = (np.arange(height) + 0.5) / height - 0.5
    band = np.exp(-((x / 0.28) ** 2))[None, :] * np.exp(-((y / 0.6) ** 4))[:, None] - 0.25
    template = gain * band[..., None] * np.asarray(PERSON_CHANNELS)[None, None, :]
    return ToyDetector(template, bias, stride)
