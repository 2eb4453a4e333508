"""Bounded pose distribution: a diagonal Gaussian mixture in an unbounded space.

Poses live in a box ``[theta_min, theta_max]``.  The mixture is fitted and
sampled in ``u``-space, and ``theta = a * tanh(u) + b`` with
``a = (theta_max - theta_min) / 2`` and ``b = (theta_max + theta_min) / 2``
carries every sample strictly inside the box.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError

__all__ = [
    "GMMModel",
    "fit_em",
    "load_gmm",
    "load_poses",
    "save_gmm",
    "save_poses",
    "to_theta",
    "to_u",
]

# variance floor used by the M-step (a constrained maximiser, so EM stays monotone)
VAR_FLOOR = 1e-6


def _scale_shift(theta_min, theta_max):
    theta_min = np.asarray(theta_min, dtype=float)
    theta_max = np.asarray(theta_max, dtype=float)
    if theta_min.shape != theta_max.shape or np.any(theta_min >= theta_max):
        raise ConfigError("need theta_min < theta_max elementwise")
    return (theta_max - theta_min) / 2, (theta_max + theta_min) / 2


def to_u(theta, theta_min, theta_max) -> np.ndarray:
    """Inverse of :func:`to_theta`; raises DomainError on or outside the bounds."""
    theta = np.asarray(theta, dtype=float)
    a, b = _scale_shift(theta_min, theta_max)
    if np.any(theta <= theta_min) or np.any(theta >= theta_max) or not np.all(np.isfinite(theta)):
        raise DomainError("theta must lie strictly inside (theta_min, theta_max)")
    r = np.clip((theta - b) / a, -np.nextafter(1.0, 0.0), np.nextafter(1.0, 0.0))
    return np.arctanh(r)


def to_theta(u, theta_min, theta_max) -> np.ndarray:
    """``a * tanh(u) + b``, nudged off the bounds where tanh rounds to +-1."""
    a, b = _scale_shift(theta_min, theta_max)
    theta = a * np.tanh(np.asarray(u, dtype=float)) + b
    lo = np.nextafter(np.asarray(theta_min, float), np.inf)
    hi = np.nextafter(np.asarray(theta_max, float), -np.inf)
    return np.clip(theta, lo, hi)


@dataclass
class GMMModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    stds: np.ndarray  # (K, D)
    theta_min: np.ndarray  # (D,)
    theta_max: np.ndarray  # (D,)
    log_likelihoods: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.stds = np.atleast_2d(np.asarray(self.stds, dtype=float))
        self.theta_min = np.asarray(self.theta_min, dtype=float)
        self.theta_max = np.asarray(self.theta_max, dtype=float)
        K, D = self.means.shape
        if self.weights.shape != (K,) or self.stds.shape != (K, D):
            raise ConfigError("inconsistent GMM parameter shapes")
        if self.theta_min.shape != (D,) or self.theta_max.shape != (D,):
            raise ConfigError("GMM bounds do not match the mixture dimension")
        if np.any(self.weights < 0) or np.any(self.weights > 1) or abs(self.weights.sum() - 1) > 1e-9:
            raise ConfigError("mixture weights must be in [0, 1] and sum to 1")
        if np.any(self.stds <= 0):
            raise ConfigError("component stds must be > 0")
        _scale_shift(self.theta_min, self.theta_max)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def scale(self) -> np.ndarray:
        return _scale_shift(self.theta_min, self.theta_max)[0]

    @property
    def shift(self) -> np.ndarray:
        return _scale_shift(self.theta_min, self.theta_max)[1]

    def log_prob_u(self, u) -> np.ndarray:
        return logsumexp(_component_logpdf(np.atleast_2d(u), self), axis=1)

    def sample_u(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        if n < 1:
            raise ConfigError("sample count must be >= 1")
        comp = rng.choice(self.n_components, size=n, p=self.weights / self.weights.sum())
        u = self.means[comp] + self.stds[comp] * rng.standard_normal((n, self.dim))
        return u, comp

    def sample(self, rng: np.random.Generator, n: int, return_components: bool = False):
        """Draw ``n`` poses (n, D), each strictly inside the pose box."""
        u, comp = self.sample_u(rng, n)
        theta = to_theta(u, self.theta_min, self.theta_max)
        return (theta, comp) if return_components else theta

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "theta_min": self.theta_min.tolist(),
            "theta_max": self.theta_max.tolist(),
            "log_likelihoods": [float(x) for x in self.log_likelihoods],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GMMModel":
        try:
            return cls(d["weights"], d["means"], d["stds"], d["theta_min"], d["theta_max"],
                       list(d.get("log_likelihoods", [])))
        except KeyError as exc:
            raise ConfigError(f"GMM file is missing {exc}") from exc


def _component_logpdf(u, model_or_params) -> np.ndarray:
    m = model_or_params
    means, stds, weights = m.means, m.stds, m.weights
    z = (u[:, None, :] - means[None]) / stds[None]
    log_norm = -0.5 * u.shape[1] * np.log(2 * np.pi) - np.log(stds).sum(axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return -0.5 * np.sum(z * z, axis=2) + log_norm[None] + logw[None]


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centres[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = rng.integers(len(x))
        else:
            i = rng.choice(len(x), p=d2 / total)
        centres.append(x[i])
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return np.array(centres)


class _Params:
    def __init__(self, weights, means, stds):
        self.weights, self.means, self.stds = weights, means, stds


def fit_em(u: np.ndarray, n_components: int = 10, max_iter: int = 200, seed: int = 0,
           theta_min=None, theta_max=None, tol: float = 1e-8) -> GMMModel:
    """Fit a diagonal mixture to u-space samples (n, D) by EM.

    Means are seeded k-means++ style with ``seed``.  Iteration stops after
    ``max_iter`` E/M rounds or when the relative log-likelihood gain drops
    below ``tol``.  A component whose responsibility mass vanishes is
    re-seeded on the sample farthest from every current mean, the only step
    that can lower the likelihood.  Bounds default to +-1 (they only matter
    for sampling).
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise ConfigError("samples must be a 2-d array (n, D)")
    n, D = u.shape
    K = int(n_components)
    if K < 1 or n < K:
        raise ConfigError(f"need at least {K} samples for {K} components, got {n}")
    rng = np.random.default_rng(seed)
    theta_min = -np.ones(D) if theta_min is None else np.asarray(theta_min, float)
    theta_max = np.ones(D) if theta_max is None else np.asarray(theta_max, float)

    global_var = np.maximum(u.var(axis=0), VAR_FLOOR)
    p = _Params(np.full(K, 1.0 / K), _kmeanspp(u, K, rng), np.tile(np.sqrt(global_var), (K, 1)))
    history: list[float] = []
    for _ in range(max_iter):
        logp = _component_logpdf(u, p)
        ll_rows = logsumexp(logp, axis=1)
        ll = float(ll_rows.sum())
        if history and abs(ll - history[-1]) < tol * abs(history[-1]):
            history.append(ll)
            break
        history.append(ll)
        resp = np.exp(logp - ll_rows[:, None])
        nk = resp.sum(axis=0)
        empty = nk < 1e-10 * n
        nk_safe = np.where(empty, 1.0, nk)
        means = resp.T @ u / nk_safe[:, None]
        var = np.einsum("nk,nkd->kd", resp, (u[:, None, :] - means[None]) ** 2) / nk_safe[:, None]
        var = np.maximum(var, VAR_FLOOR)
        weights = nk / n
        for k in np.flatnonzero(empty):
            dist = np.min(np.sum((u[:, None, :] - means[None, ~empty]) ** 2, axis=2), axis=1)
            means[k] = u[int(np.argmax(dist))]
            var[k] = global_var
            weights[k] = 1.0 / n
        p = _Params(weights / weights.sum(), means, np.sqrt(var))
    return GMMModel(p.weights, p.means, p.stds, theta_min, theta_max, history)


def fit_poses(theta: np.ndarray, theta_min, theta_max, n_components: int = 10,
              max_iter: int = 200, seed: int = 0) -> GMMModel:
    """Map poses into u-space and fit the mixture there."""
    u = to_u(theta, theta_min, theta_max)
    return fit_em(u, n_components, max_iter, seed, theta_min, theta_max)


def save_gmm(model: GMMModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_gmm(path: str | Path) -> GMMModel:
    try:
        return GMMModel.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read GMM file {path}: {exc}") from exc


def save_poses(path: str | Path, poses, theta_min, theta_max, clips=None) -> None:
    """Pose dataset: ``{"theta_min": [...], "theta_max": [...], "poses": [[...], ...]}``."""
    d = {
        "theta_min": np.asarray(theta_min, float).tolist(),
        "theta_max": np.asarray(theta_max, float).tolist(),
        "poses": np.asarray(poses, float).tolist(),
    }
    if clips is not None:
        d["clips"] = [int(c) for c in clips]
    Path(path).write_text(json.dumps(d) + "\n")


def load_poses(*paths: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Load and concatenate pose files, which must share the same bounds."""
    if not paths:
        raise ConfigError("no pose files given")
    arrays, lo, hi = [], None, None
    for path in paths:
        try:
            d = json.loads(Path(path).read_text())
            tmin, tmax = np.asarray(d["theta_min"], float), np.asarray(d["theta_max"], float)
            poses = np.asarray(d["poses"], float).reshape(-1, tmin.size)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read pose file {path}: {exc}") from exc
        if lo is None:
            lo, hi = tmin, tmax
        elif not (np.array_equal(lo, tmin) and np.array_equal(hi, tmax)):
            raise ConfigError(f"pose file {path} has different bounds")
        arrays.append(poses)
    return np.concatenate(arrays), lo, hi
