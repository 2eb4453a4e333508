"""Latent search: particle swarm, Adam, the Monte-Carlo pose-expectation loss and the attack loop.

The attack minimises the mean detection loss over sampled scenes.  PSO
explores the latent box globally, Adam then refines the best particle with
analytic gradients (built-in detectors) or forward differences (anything
else).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .detector import ToyDetector, detection_loss
from .errors import ConfigError, NumericalError
from .generator import GeneratorSpec, generate_patch, generate_patch_backward
from .scene import Scene, ScenarioSampler, SceneRenderer

__all__ = [
    "AdamConfig",
    "AdamResult",
    "AttackResult",
    "EoPTObjective",
    "PSOConfig",
    "PSOResult",
    "adam",
    "attack",
    "pso",
]


@dataclass(frozen=True)
class PSOConfig:
    n_particles: int = 50
    iterations: int = 30
    inertia: float = 0.4
    c1: float = 1.494
    c2: float = 1.494
    # velocity clamp as a fraction of each coordinate's range
    vmax: float = 0.2

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError("PSO needs at least 2 particles")
        if self.iterations < 0:
            raise ConfigError("PSO iteration count must be >= 0")
        if not (self.inertia > 0 and self.c1 > 0 and self.c2 > 0):
            raise ConfigError("PSO inertia and acceleration constants must be > 0")
        if not self.vmax > 0:
            raise ConfigError("PSO velocity clamp must be > 0")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 300
    batch_size: int = 100

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("Adam needs iterations >= 0 and batch size >= 1")


def _bounds(bounds, dim: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (dim,)).copy() for b in bounds)
    if np.any(lo >= hi):
        raise ConfigError("latent bounds must satisfy lo < hi")
    return lo, hi


@dataclass
class PSOResult:
    best: np.ndarray
    best_value: float
    values: np.ndarray  # (iterations + 1, N) fitness of every evaluated position
    personal_best: np.ndarray  # (iterations + 1, N) personal-best values after each evaluation
    best_iteration: int


def pso(objective: Callable[[np.ndarray, int], np.ndarray], dim: int, config: PSOConfig = PSOConfig(),
        bounds=(-3.0, 3.0), seed: int = 0, callback=None) -> PSOResult:
    """Minimise ``objective(Z, iteration) -> (N,)`` over the box.

    Iteration 0 evaluates the random initial swarm; iterations 1..T follow a
    velocity update each.  Velocities and positions are clamped.
    ``callback(iteration, values, best_value)`` runs after every update.
    """
    lo, hi = _bounds(bounds, dim)
    N = config.n_particles
    rng = np.random.default_rng(seed)
    vmax = config.vmax * (hi - lo)
    z = rng.uniform(lo, hi, (N, dim))
    v = rng.uniform(-vmax, vmax, (N, dim))

    def evaluate(Z, t):
        f = np.asarray(objective(Z, t), dtype=float).reshape(N)
        if not np.all(np.isfinite(f)):
            raise NumericalError(f"PSO objective returned non-finite values at iteration {t}")
        return f

    f = evaluate(z, 0)
    p, pf = z.copy(), f.copy()
    k = int(np.argmin(pf))
    g, gf, g_iter = p[k].copy(), float(pf[k]), 0
    values, pbest = [f], [pf.copy()]
    for t in range(1, config.iterations + 1):
        r1 = rng.random((N, dim))
        r2 = rng.random((N, dim))
        v = config.inertia * v + config.c1 * r1 * (p - z) + config.c2 * r2 * (g - z)
        v = np.clip(v, -vmax, vmax)
        z = np.clip(z + v, lo, hi)
        f = evaluate(z, t)
        better = f < pf
        p[better], pf[better] = z[better], f[better]
        k = int(np.argmin(pf))
        if pf[k] < gf:
            g, gf, g_iter = p[k].copy(), float(pf[k]), t
        values.append(f)
        pbest.append(pf.copy())
        if callback is not None:
            callback(t, f, gf)
    return PSOResult(g, gf, np.array(values), np.array(pbest), g_iter)


@dataclass
class AdamResult:
    z: np.ndarray
    losses: list[float]


def adam(grad_fn: Callable[[np.ndarray, int], tuple], z0, config: AdamConfig = AdamConfig(),
         bounds=(-3.0, 3.0), callback=None) -> AdamResult:
    """Bias-corrected Adam with the iterate clamped to the box after each step.

    ``grad_fn(z, step)`` returns ``(loss, grad)``; loss may be None.
    ``callback(step, loss, z_before_step)`` runs once per step.
    """
    z = np.asarray(z0, dtype=float).copy()
    lo, hi = _bounds(bounds, z.size)
    m = np.zeros_like(z)
    s = np.zeros_like(z)
    losses = []
    for t in range(config.iterations):
        loss, g = grad_fn(z, t)
        g = np.asarray(g, dtype=float)
        if g.shape != z.shape:
            raise ConfigError(f"gradient has shape {g.shape}, latent {z.shape}")
        if not np.all(np.isfinite(g)):
            bad = np.flatnonzero(~np.isfinite(g))
            raise NumericalError(f"non-finite gradient at Adam step {t}: "
                                 f"{bad.size} bad entries, first at index {bad[0]}")
        if callback is not None:
            callback(t, loss, z)
        losses.append(float("nan") if loss is None else float(loss))
        m = config.beta1 * m + (1 - config.beta1) * g
        s = config.beta2 * s + (1 - config.beta2) * g * g
        mhat = m / (1 - config.beta1 ** (t + 1))
        shat = s / (1 - config.beta2 ** (t + 1))
        z = np.clip(z - config.lr * mhat / (np.sqrt(shat) + config.eps), lo, hi)
    return AdamResult(z, losses)


@dataclass
class EoPTObjective:
    """Mean detection loss of a latent over a Monte-Carlo batch of scenes.

    ``detectors`` holds built-in :class:`ToyDetector` instances (analytic
    gradients) and/or any object with ``detect(image) -> list[Detection]``.
    The batch for ``epoch`` is drawn from the sampler's counter streams; with
    ``resample=False`` every epoch reuses batch 0.
    """

    renderer: SceneRenderer
    sampler: ScenarioSampler
    spec: GeneratorSpec
    detectors: Sequence
    weights: Sequence[float] | None = None
    batch_size: int = 100
    workers: int = 1
    resample: bool = True
    fd_step: float = 0.05
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not self.detectors:
            raise ConfigError("at least one detector is required")
        w = np.ones(len(self.detectors)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(self.detectors),) or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("ensemble weights must be nonnegative, one per detector, positive sum")
        self._w = w / w.sum()
        if self.spec.patch_size != self.renderer.patch_size:
            raise ConfigError("generator and renderer patch sizes differ")

    @property
    def analytic(self) -> bool:
        return all(isinstance(d, ToyDetector) for d in self.detectors)

    def scenes(self, epoch: int) -> list[Scene]:
        key = epoch if self.resample else 0
        if key not in self._cache:
            self._cache.clear()
            scenes = self.renderer.build_batch(self.sampler, key, self.batch_size, self.workers)
            H, W = self.renderer.height, self.renderer.width
            orders = [[None if sc.gt is None else d.window_order(sc.gt, H, W) if isinstance(d, ToyDetector)
                       else None for d in self.detectors] for sc in scenes]
            self._cache[key] = (scenes, orders)
        return self._cache[key][0]

    def _orders(self, epoch: int):
        self.scenes(epoch)
        return self._cache[epoch if self.resample else 0][1]

    def _per_detector(self, patches: np.ndarray, epoch: int) -> np.ndarray:
        """(n_detectors, B) mean losses for a batch of patches (B, P, P, C)."""
        scenes, orders = self.scenes(epoch), self._orders(epoch)
        B = patches.shape[0]
        total = np.zeros((len(self.detectors), B))
        for sc, order in zip(scenes, orders):
            if sc.gt is None:
                continue
            images = sc.operator.image(patches)
            for j, det in enumerate(self.detectors):
                if isinstance(det, ToyDetector):
                    conf, _ = det.select_first(images, order[j])
                    total[j] += conf
                else:
                    total[j] += [detection_loss(det.detect(im), sc.gt, "person") for im in images]
        return total / len(scenes)

    def loss_batch(self, Z: np.ndarray, epoch: int) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return self._w @ self._per_detector(generate_patch(self.spec, Z), epoch)

    def loss(self, z, epoch: int) -> float:
        return float(self.loss_batch(np.asarray(z, float)[None], epoch)[0])

    def loss_and_grad(self, z, epoch: int) -> tuple[float, np.ndarray]:
        if not self.analytic:
            return self.fd_loss_and_grad(z, epoch)
        z = np.asarray(z, dtype=float)
        patch = generate_patch(self.spec, z[None])
        scenes, orders = self.scenes(epoch), self._orders(epoch)
        H, W = self.renderer.height, self.renderer.width
        per = np.zeros(len(self.detectors))
        g_patch = np.zeros(patch.shape[1:])
        for sc, order in zip(scenes, orders):
            if sc.gt is None:
                continue
            images = sc.operator.image(patch)
            g_img = np.zeros(images.shape[1:])
            for j, det in enumerate(self.detectors):
                conf, win = det.select_first(images, order[j])
                per[j] += conf[0]
                if win[0] >= 0:
                    g_img += det.paste(int(win[0]), H, W, self._w[j] * conf[0] * (1 - conf[0]))
            g_patch += sc.operator.backward(patch[0], g_img)
        n = len(scenes)
        loss = float(self._w @ (per / n))
        return loss, generate_patch_backward(self.spec, z, g_patch / n)

    def fd_loss_and_grad(self, z, epoch: int) -> tuple[float, np.ndarray]:
        """Forward differences with step ``fd_step``, all probes on the same batch."""
        z = np.asarray(z, dtype=float)
        probes = z[None] + self.fd_step * np.vstack([np.zeros(z.size), np.eye(z.size)])
        f = self.loss_batch(probes, epoch)
        return float(f[0]), (f[1:] - f[0]) / self.fd_step


@dataclass
class AttackResult:
    z: np.ndarray
    patch: np.ndarray
    log: list[dict]
    pso: PSOResult
    adam: AdamResult


def attack(objective: EoPTObjective, pso_config: PSOConfig = PSOConfig(),
           adam_config: AdamConfig = AdamConfig(), bounds=(-3.0, 3.0), seed: int = 0,
           log_fn=None) -> AttackResult:
    """PSO over the latent box, then Adam from the best particle.

    PSO iteration t scores the swarm on batch t (0 is the initial swarm);
    Adam step t uses batch ``pso_config.iterations + 1 + t``.  One log entry
    per PSO update and per Adam step.
    """
    dim = objective.spec.dim
    log: list[dict] = []
    clock = [time.perf_counter()]

    def emit(phase, it, loss, best):
        now = time.perf_counter()
        entry = {"phase": phase, "iter": int(it), "loss": float(loss), "best_loss": float(best),
                 "wall_ms": round((now - clock[0]) * 1000.0, 3)}
        clock[0] = now
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)

    res_pso = pso(objective.loss_batch, dim, pso_config, bounds, seed,
                  callback=lambda t, f, gf: emit("pso", t, np.min(f), gf))
    offset = pso_config.iterations + 1
    best = [res_pso.best_value]

    def step(z, t):
        loss, grad = objective.loss_and_grad(z, offset + t)
        best[0] = min(best[0], loss)
        emit("adam", t, loss, best[0])
        return loss, grad

    res_adam = adam(step, res_pso.best, adam_config, bounds)
    return AttackResult(res_adam.z, generate_patch(objective.spec, res_adam.z), log, res_pso, res_adam)
