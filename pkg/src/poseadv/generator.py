"""Latent-to-patch generators.

``direct`` treats the latent as per-pixel logits.  ``smooth`` keeps only the
lowest ``coeffs x coeffs`` 2-D cosine frequencies per channel, so every
patch it can emit is smooth; the latent holds those coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft
from scipy.special import expit

from .errors import ConfigError

__all__ = ["GeneratorSpec", "generate_patch", "generate_patch_backward"]


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "smooth"
    patch_size: int = 16
    coeffs: int = 4
    scale: float = 16.0
    channels: int = 3

    def __post_init__(self):
        if self.kind not in ("direct", "smooth"):
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if self.patch_size < 1:
            raise ConfigError("patch size must be >= 1")
        if self.kind == "smooth" and not 1 <= self.coeffs <= self.patch_size:
            raise ConfigError("coefficient count must be in [1, patch_size]")

    @property
    def dim(self) -> int:
        if self.kind == "direct":
            return self.patch_size * self.patch_size * self.channels
        return self.coeffs * self.coeffs * self.channels

    @cached_property
    def basis(self) -> np.ndarray:
        """(P*P, n*n) orthonormal cosine basis restricted to the low frequencies."""
        P, n = self.patch_size, self.coeffs
        m = scipy.fft.idct(np.eye(P), norm="ortho", axis=0)[:, :n]  # column k: frequency k
        return np.kron(m, m)


def _logits(spec: GeneratorSpec, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != spec.dim:
        raise ConfigError(f"latent has {z.shape[-1]} values, generator needs {spec.dim}")
    P, C = spec.patch_size, spec.channels
    lead = z.shape[:-1]
    if spec.kind == "direct":
        return z.reshape(lead + (P, P, C))
    coef = z.reshape((-1, spec.coeffs * spec.coeffs, C))
    # one product per latent so a batch reproduces single calls bit for bit
    out = np.stack([spec.scale * (spec.basis @ c) for c in coef])
    return out.reshape(lead + (P, P, C))


def generate_patch(spec: GeneratorSpec, z) -> np.ndarray:
    """Patch(es) in (0, 1): (P, P, C), or (B, P, P, C) for a (B, D) latent batch."""
    return expit(_logits(spec, z))


def generate_patch_backward(spec: GeneratorSpec, z, grad_patch: np.ndarray) -> np.ndarray:
    """d(loss)/d(z) from d(loss)/d(patch)."""
    p = generate_patch(spec, z)
    g = np.asarray(grad_patch, dtype=float) * p * (1 - p)
    if spec.kind == "direct":
        return g.reshape(-1)
    P, C = spec.patch_size, spec.channels
    return (spec.scale * spec.basis.T @ g.reshape(P * P, C)).reshape(-1)
