"""Scoring a patch on a held-out scenario set."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .detector import BBox, Detection
from .errors import ConfigError
from .metrics import asr, detected, map_metric
from .scene import EVAL_STREAM, ScenarioSampler, SceneRenderer

__all__ = ["EvalResult", "FrameResult", "IOU_SWEEP", "evaluate_frames", "evaluate_patch"]

IOU_SWEEP = (0.01, 0.1, 0.3, 0.5)


@dataclass
class FrameResult:
    detections: list[Detection]
    gt: BBox | None
    evaded: bool

    def to_dict(self) -> dict:
        return {"gt": None if self.gt is None else list(self.gt.as_tuple()),
                "evaded": self.evaded,
                "detections": [d.to_dict() for d in self.detections]}


@dataclass
class EvalResult:
    frames: list[FrameResult]
    asr: float
    map: float
    tau_iou: float
    tau_conf: float
    sweep: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def to_dict(self, with_frames: bool = True) -> dict:
        out = {"asr": self.asr, "map": self.map, "n_frames": self.n_frames,
               "tau_iou": self.tau_iou, "tau_conf": self.tau_conf,
               "sweep": [{"tau_iou": t, **v} for t, v in sorted(self.sweep.items())]}
        if with_frames:
            out["frames"] = [f.to_dict() for f in self.frames]
        return out

    def to_json(self, with_frames: bool = True) -> str:
        return json.dumps(self.to_dict(with_frames), sort_keys=True, indent=1) + "\n"


def _check_tau(name, t):
    if not 0 < t <= 1:
        raise ConfigError(f"{name} must lie in (0, 1], got {t}")


def evaluate_frames(frames: Sequence[tuple[list[Detection], BBox | None]], tau_iou: float = 0.5,
                    tau_conf: float = 0.5, sweep=IOU_SWEEP) -> EvalResult:
    _check_tau("tau_iou", tau_iou)
    _check_tau("tau_conf", tau_conf)
    results = [FrameResult(list(d), gt, not detected(d, gt, tau_iou, tau_conf)) for d, gt in frames]
    table = {float(t): {"asr": asr(frames, t, tau_conf), "map": map_metric(frames, t)} for t in sweep}
    return EvalResult(results, asr(frames, tau_iou, tau_conf), map_metric(frames, tau_iou),
                      tau_iou, tau_conf, table)


def evaluate_patch(patch, renderer: SceneRenderer, sampler: ScenarioSampler, detector,
                   n_scenes: int = 200, epoch: int = 0, workers: int = 1, tau_iou: float = 0.5,
                   tau_conf: float = 0.5, stream: int = EVAL_STREAM, sweep=IOU_SWEEP) -> EvalResult:
    """Render ``patch`` on ``n_scenes`` scenes of the given stream and run the detector.

    ``detector`` needs ``detect(image) -> list[Detection]``.  Frames appear in
    scenario index order whatever the worker count.
    """
    scenes = renderer.build_batch(sampler.with_stream(stream), epoch, n_scenes, workers)
    frames = [(detector.detect(sc.operator.image(patch)), sc.gt) for sc in scenes]
    return evaluate_frames(frames, tau_iou, tau_conf, sweep)
