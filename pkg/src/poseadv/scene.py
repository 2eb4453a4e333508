"""Monte-Carlo scenarios (pose, camera, light, background, cloth warp) and scene building.

Every scenario is drawn from its own counter-based random stream keyed by
``(seed, stream, epoch, index)``, so a batch is the same whatever order or
thread it is built in.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .body import BodyShape, CameraParams, IUVMap, LightParams, default_body, pose_body, render_iuv
from .detector import BBox
from .errors import ConfigError
from .gmm import GMMModel
from .texture import SceneOperator, TextureStack, scene_operator, tps_from_displacements

__all__ = [
    "SceneRenderer",
    "SceneSample",
    "ScenarioSampler",
    "Scene",
    "default_stack",
    "procedural_backgrounds",
    "sample_scenario",
    "scenario_rng",
]

TRAIN_STREAM = 0
EVAL_STREAM = 1


def scenario_rng(seed: int, stream: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, epoch, index])))


@dataclass
class SceneSample:
    theta: np.ndarray
    azimuth: float
    elevation: float
    distance: float
    light: LightParams
    background: int
    tps_displacements: np.ndarray  # (K, G*G, 2)


@dataclass
class ScenarioSampler:
    gmm: GMMModel
    n_backgrounds: int
    seed: int = 0
    azimuth: tuple[float, float] = (-180.0, 180.0)
    elevation: tuple[float, float] = (0.0, 30.0)
    distance: tuple[float, float] = (4.2, 4.8)
    light: tuple[float, float] = (0.5, 1.5)
    n_parts: int = 10
    tps_grid: int = 4
    tps_disp: float = 0.05
    stream: int = TRAIN_STREAM

    def __post_init__(self):
        for name in ("azimuth", "elevation", "distance", "light"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} range is empty")
        if not (-180 <= self.azimuth[0] and self.azimuth[1] <= 180):
            raise ConfigError("azimuth must lie in [-180, 180]")
        if not (0 <= self.elevation[0] and self.elevation[1] <= 30):
            raise ConfigError("elevation must lie in [0, 30]")
        if self.distance[0] <= 0:
            raise ConfigError("camera distance must be > 0")
        if self.n_backgrounds < 1:
            raise ConfigError("at least one background is required")

    def with_stream(self, stream: int) -> "ScenarioSampler":
        return ScenarioSampler(**{**self.__dict__, "stream": stream})

    def with_gmm(self, gmm: GMMModel) -> "ScenarioSampler":
        return ScenarioSampler(**{**self.__dict__, "gmm": gmm})


def sample_scenario(sampler: ScenarioSampler, epoch: int, index: int) -> SceneSample:
    rng = scenario_rng(sampler.seed, sampler.stream, epoch, index)
    theta = sampler.gmm.sample(rng, 1)[0]
    az = rng.uniform(*sampler.azimuth)
    el = rng.uniform(*sampler.elevation)
    dist = rng.uniform(*sampler.distance)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    light = LightParams(tuple(float(x) for x in d), float(rng.uniform(*sampler.light)))
    bg = int(rng.integers(sampler.n_backgrounds))
    g2 = sampler.tps_grid**2
    disp = rng.uniform(-sampler.tps_disp, sampler.tps_disp, (sampler.n_parts, g2, 2))
    return SceneSample(theta, float(az), float(el), float(dist), light, bg, disp)


def procedural_backgrounds(n: int, height: int, width: int, seed: int = 0,
                           level: tuple[float, float] = (0.02, 0.3)) -> list[np.ndarray]:
    """Dim, smoothly varying colour fields standing in for photographed scenes."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width] / max(height, width)
    out = []
    for _ in range(n):
        img = np.empty((height, width, 3))
        base = rng.uniform(*level, size=3)
        for c in range(3):
            field_ = np.zeros((height, width))
            for _ in range(4):
                fx, fy = rng.uniform(0, 4, size=2)
                phase = rng.uniform(0, 2 * np.pi)
                field_ += np.cos(2 * np.pi * (fx * x + fy * y) + phase)
            img[..., c] = base[c] + 0.04 * field_
        out.append(np.clip(img, 0.0, 1.0))
    return out


# head keeps a skin tone; everything else is clothing the patch covers
SKIN = (0.85, 0.65, 0.55)
CLOTH = (0.5, 0.5, 0.5)


def default_stack(body: BodyShape, size: int = 32) -> TextureStack:
    attack = np.array([name != "head" for name in body.part_names])
    tex = np.empty((body.n_parts, size, size, 3))
    tex[:] = CLOTH
    tex[~attack] = SKIN
    return TextureStack(tex, attack)


@dataclass
class Scene:
    sample: SceneSample
    iuv: IUVMap
    gt: BBox | None
    operator: SceneOperator


@dataclass
class SceneRenderer:
    """Turns scenario samples into scenes for a fixed body, image size and texture stack."""

    body: BodyShape = field(default_factory=default_body)
    backgrounds: list[np.ndarray] = field(default_factory=list)
    width: int = 32
    height: int = 32
    fov: float = 30.0
    patch_size: int = 16
    texture_size: int = 32
    step: float | None = None
    tps_grid: int = 4
    tps_max_disp: float = 0.1
    stack: TextureStack | None = None

    def __post_init__(self):
        if not self.backgrounds:
            self.backgrounds = procedural_backgrounds(100, self.height, self.width)
        for bg in self.backgrounds:
            if bg.shape != (self.height, self.width, 3):
                raise ConfigError(f"background {bg.shape} does not match image {self.height}x{self.width}")
        if self.stack is None:
            self.stack = default_stack(self.body, self.texture_size)
        self.target = tuple(float(x) for x in self.body.bounding_sphere()[0])

    def camera(self, s: SceneSample) -> CameraParams:
        return CameraParams(s.azimuth, s.elevation, s.distance, self.width, self.height, self.fov, self.target)

    def build(self, s: SceneSample) -> Scene:
        posed = pose_body(self.body, s.theta)
        iuv = render_iuv(posed, self.camera(s), self.step)
        warps = [tps_from_displacements(d, self.tps_grid, self.tps_max_disp) for d in s.tps_displacements]
        op = scene_operator(iuv, self.stack, warps, self.patch_size, self.backgrounds[s.background], s.light)
        box = iuv.bbox(0.5)
        return Scene(s, iuv, None if box is None else BBox(*box), op)

    def build_batch(self, sampler: ScenarioSampler, epoch: int, n: int, workers: int = 1) -> list[Scene]:
        def one(i):
            return self.build(sample_scenario(sampler, epoch, i))

        if workers <= 1:
            return [one(i) for i in range(n)]
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(n)))
