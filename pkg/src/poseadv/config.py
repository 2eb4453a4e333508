"""Run configuration: one JSON file describing inputs, models, optimiser and detectors.

Schema (every key optional; defaults shown by :meth:`RunConfig.to_dict`)::

    {
      "seed": 0,
      "paths": {"body": null, "poses": [], "backgrounds": [], "gmm": null, "out": "out"},
      "gmm": {"components": 10, "max_iter": 200, "corpus_clips": 100, "corpus_frames": 20},
      "render": {"width": 32, "height": 32, "fov": 30.0, "texture_size": 32,
                 "tps_grid": 4, "tps_disp": 0.05, "tps_max_disp": 0.1, "step": null},
      "scenario": {"azimuth": [-180, 180], "elevation": [0, 30], "distance": [4.2, 4.8],
                   "light": [0.5, 1.5], "n_backgrounds": 100},
      "generator": {"kind": "smooth", "patch_size": 16, "coeffs": 4, "scale": 16.0},
      "latent_bounds": [-3.0, 3.0],
      "pso": {"n_particles": 50, "iterations": 30, "inertia": 0.4, "c1": 1.494, "c2": 1.494, "vmax": 0.2},
      "adam": {"lr": 0.01, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "iterations": 300, "batch_size": 100},
      "resample": true,
      "detectors": [{"kind": "toy"}, {"endpoint": "tcp://127.0.0.1:9000", "weight": 1.0, "timeout": 30}],
      "eval": {"n_scenes": 200, "tau_iou": 0.5, "tau_conf": 0.5}
    }

Relative paths resolve against the config file's directory.  Empty
``poses`` means the built-in synthetic corpus; empty ``backgrounds`` means
procedural backgrounds.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .generator import GeneratorSpec
from .optimizer import AdamConfig, PSOConfig

__all__ = ["RunConfig", "load_config"]

DEFAULTS = {
    "seed": 0,
    "paths": {"body": None, "poses": [], "backgrounds": [], "gmm": None, "out": "out"},
    "gmm": {"components": 10, "max_iter": 200, "corpus_clips": 100, "corpus_frames": 20},
    "render": {"width": 32, "height": 32, "fov": 30.0, "texture_size": 32,
               "tps_grid": 4, "tps_disp": 0.05, "tps_max_disp": 0.1, "step": None},
    "scenario": {"azimuth": [-180.0, 180.0], "elevation": [0.0, 30.0], "distance": [4.2, 4.8],
                 "light": [0.5, 1.5], "n_backgrounds": 100},
    "generator": {"kind": "smooth", "patch_size": 16, "coeffs": 4, "scale": 16.0},
    "latent_bounds": [-3.0, 3.0],
    "pso": {"n_particles": 50, "iterations": 30, "inertia": 0.4, "c1": 1.494, "c2": 1.494, "vmax": 0.2},
    "adam": {"lr": 0.01, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "iterations": 300, "batch_size": 100},
    "resample": True,
    "detectors": [{"kind": "toy"}],
    "eval": {"n_scenes": 200, "tau_iou": 0.5, "tau_conf": 0.5},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        self.data = _merge(DEFAULTS, self.data)
        self.validate()

    # convenience views
    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def path(self, value) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def generator(self) -> GeneratorSpec:
        g = self.data["generator"]
        return GeneratorSpec(g["kind"], int(g["patch_size"]), int(g["coeffs"]), float(g["scale"]))

    @property
    def pso(self) -> PSOConfig:
        return PSOConfig(**self.data["pso"])

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(**self.data["adam"])

    def validate(self):
        d = self.data
        try:
            self.generator, self.pso, self.adam
        except TypeError as exc:
            raise ConfigError(f"bad optimiser/generator section: {exc}") from None
        ev = d["eval"]
        for name in ("tau_iou", "tau_conf"):
            if not 0 < float(ev[name]) <= 1:
                raise ConfigError(f"eval.{name} must lie in (0, 1]")
        if int(ev["n_scenes"]) < 1:
            raise ConfigError("eval.n_scenes must be >= 1")
        lo, hi = d["latent_bounds"]
        if not float(lo) < float(hi):
            raise ConfigError("latent_bounds must satisfy lo < hi")
        if not isinstance(d["detectors"], list) or not d["detectors"]:
            raise ConfigError("detectors must be a nonempty list")
        for det in d["detectors"]:
            if not isinstance(det, dict) or (det.get("kind") != "toy" and "endpoint" not in det):
                raise ConfigError(f"detector entry {det!r} needs kind 'toy' or an endpoint")
            extra = set(det) - {"kind", "endpoint", "weight", "timeout"}
            if extra:
                raise ConfigError(f"unknown detector keys {sorted(extra)}")
        paths = d["paths"]
        for key in ("body", "gmm"):
            p = self.path(paths[key])
            if p is not None and not p.is_file():
                raise ConfigError(f"paths.{key}: {p} does not exist")
        for key in ("poses", "backgrounds"):
            if not isinstance(paths[key], list):
                raise ConfigError(f"paths.{key} must be a list")
            for item in paths[key]:
                if not self.path(item).is_file():
                    raise ConfigError(f"paths.{key}: {self.path(item)} does not exist")

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=1, sort_keys=True) + "\n"

    def with_overrides(self, **top) -> "RunConfig":
        data = self.to_dict()
        for k, v in top.items():
            if v is not None:
                data[k] = v
        return RunConfig(data, self.base_dir)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return RunConfig(data, p.resolve().parent)
