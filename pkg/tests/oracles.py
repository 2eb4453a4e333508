"""Brute-force reference implementations shared by the metric tests."""
import numpy as np

from poseadv.detector import BBox, Detection


def iou_bf(a, b):
    # pixel-free continuous overlap, written independently of the library
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    return inter / union if union > 0 else 0.0


def asr_bf(frames, ti, tc):
    evaded = 0
    for dets, gt in frames:
        hit = False
        if gt is not None:
            for d in dets:
                if d.label == "person" and d.conf > tc and iou_bf(d.bbox, gt) > ti:
                    hit = True
        evaded += not hit
    return evaded / len(frames)


def ap_bf(frames, ti):
    pool = [(d.conf, f, k) for f, (dets, _) in enumerate(frames) for k, d in enumerate(dets) if d.label == "person"]
    n_gt = sum(gt is not None for _, gt in frames)
    if not pool or n_gt == 0:
        return 0.0
    pool.sort(key=lambda x: -x[0])  # stable
    points = []
    for n in range(1, len(pool) + 1):
        # rematch the whole prefix from scratch
        used, tp = set(), 0
        for conf, f, k in pool[:n]:
            gt = frames[f][1]
            if gt is not None and f not in used and iou_bf(frames[f][0][k].bbox, gt) > ti:
                used.add(f)
                tp += 1
        points.append((tp, tp / n))
    total = 0.0
    for i in range(101):
        total += max([p for tp, p in points if 100 * tp >= i * n_gt] or [0.0])
    return total / 101


def random_frames(rng, n_frames=20):
    frames = []
    for _ in range(n_frames):
        gt = None
        if rng.random() > 0.1:
            x, y = rng.uniform(0, 10, 2)
            gt = BBox(x, y, x + rng.uniform(1, 6), y + rng.uniform(1, 6))
        dets = []
        for _ in range(rng.integers(0, 4)):
            if gt is not None and rng.random() < 0.6:
                j = rng.normal(scale=1.0, size=4)
                x1, y1 = gt.x1 + j[0], gt.y1 + j[1]
                box = BBox(x1, y1, x1 + max(0.1, gt.x2 - gt.x1 + j[2]), y1 + max(0.1, gt.y2 - gt.y1 + j[3]))
            else:
                x, y = rng.uniform(0, 10, 2)
                box = BBox(x, y, x + rng.uniform(0.5, 5), y + rng.uniform(0.5, 5))
            # coarse confidences so ties occur
            conf = float(rng.integers(0, 11)) / 10
            label = "person" if rng.random() < 0.9 else "car"
            dets.append(Detection(box, conf, label))
        frames.append((dets, gt))
    return frames
