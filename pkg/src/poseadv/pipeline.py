"""Assemble bodies, pose models, renderers, samplers and detectors from a RunConfig."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .body import default_body, load_body
from .config import RunConfig
from .detector import person_detector
from .errors import ConfigError
from .gmm import GMMModel, fit_poses, load_gmm, load_poses
from .imageio import read_ppm
from .optimizer import AttackResult, EoPTObjective, attack
from .poses import synthetic_corpus
from .protocol import ExternalDetector
from .scene import ScenarioSampler, SceneRenderer, procedural_backgrounds

__all__ = ["Pipeline", "write_attack_outputs"]


class Pipeline:
    """Lazily built components for one configuration."""

    def __init__(self, config: RunConfig, workers: int = 1):
        self.config = config
        self.workers = max(1, int(workers))
        self._renderer = self._gmm = None
        self._detectors = None

    @property
    def body(self):
        p = self.config.path(self.config["paths"]["body"])
        return default_body() if p is None else load_body(p)

    def poses(self):
        files = self.config["paths"]["poses"]
        if files:
            theta, lo, hi = load_poses(*[self.config.path(f) for f in files])
            return theta, lo, hi
        g = self.config["gmm"]
        theta, _, lo, hi = synthetic_corpus(int(g["corpus_clips"]), int(g["corpus_frames"]), self.config.seed)
        return theta, lo, hi

    @property
    def gmm(self) -> GMMModel:
        if self._gmm is None:
            p = self.config.path(self.config["paths"]["gmm"])
            if p is not None:
                self._gmm = load_gmm(p)
            else:
                theta, lo, hi = self.poses()
                g = self.config["gmm"]
                self._gmm = fit_poses(theta, lo, hi, int(g["components"]), int(g["max_iter"]), self.config.seed)
        return self._gmm

    @gmm.setter
    def gmm(self, model: GMMModel):
        self._gmm = model

    @property
    def renderer(self) -> SceneRenderer:
        if self._renderer is None:
            r = self.config["render"]
            W, H = int(r["width"]), int(r["height"])
            files = self.config["paths"]["backgrounds"]
            if files:
                bgs = [read_ppm(self.config.path(f)) for f in files]
            else:
                bgs = procedural_backgrounds(int(self.config["scenario"]["n_backgrounds"]), H, W,
                                             self.config.seed)
            body = self.body
            self._renderer = SceneRenderer(
                body, bgs, W, H, float(r["fov"]), self.config.generator.patch_size, int(r["texture_size"]),
                r["step"], int(r["tps_grid"]), float(r["tps_max_disp"]))
        return self._renderer

    def sampler(self, gmm: GMMModel | None = None) -> ScenarioSampler:
        s, r = self.config["scenario"], self.config["render"]
        gmm = self.gmm if gmm is None else gmm
        if gmm.means.shape[1] != 3 * self.renderer.body.n_joints:
            raise ConfigError(f"GMM models {gmm.means.shape[1]} angles, body has {self.renderer.body.n_joints} joints")
        return ScenarioSampler(gmm, len(self.renderer.backgrounds), self.config.seed,
                               tuple(s["azimuth"]), tuple(s["elevation"]), tuple(s["distance"]),
                               tuple(s["light"]), self.renderer.body.n_parts, int(r["tps_grid"]),
                               float(r["tps_disp"]))

    def detectors(self):
        """(detector objects, weights), opening external connections once."""
        if self._detectors is None:
            dets, weights = [], []
            for entry in self.config["detectors"]:
                if entry.get("kind") == "toy":
                    dets.append(person_detector())
                else:
                    dets.append(ExternalDetector(entry["endpoint"], float(entry.get("timeout", 30.0))))
                weights.append(float(entry.get("weight", 1.0)))
            self._detectors = (dets, weights)
        return self._detectors

    def objective(self, gmm: GMMModel | None = None) -> EoPTObjective:
        dets, weights = self.detectors()
        return EoPTObjective(self.renderer, self.sampler(gmm), self.config.generator, dets, weights,
                             self.config.adam.batch_size, self.workers, bool(self.config["resample"]))

    def attack(self, log_fn=None) -> AttackResult:
        return attack(self.objective(), self.config.pso, self.config.adam,
                      tuple(self.config["latent_bounds"]), self.config.seed, log_fn)

    def close(self):
        if self._detectors is not None:
            for d in self._detectors[0]:
                if hasattr(d, "close"):
                    d.close()
            self._detectors = None


def write_attack_outputs(out_dir: str | Path, result: AttackResult, config: RunConfig) -> None:
    """patch.ppm, latent.json, config.json and log.jsonl."""
    from .imageio import write_ppm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(result.patch, out / "patch.ppm")
    spec = config.generator
    latent = {"generator": {"kind": spec.kind, "patch_size": spec.patch_size, "coeffs": spec.coeffs,
                            "scale": spec.scale},
              "z": np.asarray(result.z, float).tolist()}
    (out / "latent.json").write_text(json.dumps(latent) + "\n")
    (out / "config.json").write_text(config.to_json())
    with open(out / "log.jsonl", "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry) + "\n")
