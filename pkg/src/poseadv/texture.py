"""Texture stacks, patch tiling, TPS cloth warp, grid sampling and compositing.

Conventions (frozen):

* texel ``(row i, col j)`` of an ``N x N`` texture sits at
  ``(u, v) = (j / (N-1), i / (N-1))`` -- the mesh grid returned by
  :func:`uv_grid`;
* bilinear sampling uses that align-corners mapping and clamps to the
  border;
* TPS warps are inverse maps: output texel at ``q`` reads the input at
  ``warp(q)``.

Every stage is linear in the texture values except the final clamp, so
each stage comes with a hand-written backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .body import IUVMap, LightParams
from .errors import ConfigError, NumericalError

__all__ = [
    "LatticeWarp",
    "TPSParams",
    "TextureStack",
    "bilinear_taps",
    "composite",
    "composite_backward",
    "control_grid",
    "grid_sample",
    "grid_sample_backward",
    "tile_patch",
    "tile_patch_backward",
    "tps_apply",
    "tps_apply_backward",
    "tps_fit",
    "tps_from_displacements",
    "uv_grid",
    "warp_stack",
]


def uv_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Mesh grid ``(U, V)``: every row of U is linspace(0, 1, n) and V = U.T."""
    if n < 2:
        raise ConfigError("texture size must be >= 2")
    lin = np.linspace(0.0, 1.0, n)
    U = np.kron(np.ones((n, 1)), lin[None, :])
    return U, U.T.copy()


@lru_cache(maxsize=16)
def _texel_points(n: int) -> np.ndarray:
    U, V = uv_grid(n)
    q = np.stack([U.ravel(), V.ravel()], axis=1)
    q.setflags(write=False)
    return q


@dataclass
class TextureStack:
    """Per-part textures (K, N, N, 3) in [0, 1] and which parts the patch covers."""

    textures: np.ndarray
    attackable: np.ndarray

    def __post_init__(self):
        self.textures = np.asarray(self.textures, dtype=float)
        self.attackable = np.asarray(self.attackable, dtype=bool)
        if self.textures.ndim != 4 or self.textures.shape[1] != self.textures.shape[2]:
            raise ConfigError("textures must have shape (K, N, N, C)")
        if self.textures.shape[1] < 2:
            raise ConfigError("texture size must be >= 2")
        if self.attackable.shape != (self.textures.shape[0],):
            raise ConfigError("one attackable flag per part is required")
        if np.any(self.textures < 0) or np.any(self.textures > 1):
            raise ConfigError("texture values must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.textures.shape[1]

    @property
    def n_parts(self) -> int:
        return self.textures.shape[0]

    @classmethod
    def uniform(cls, n_parts: int, size: int, color, attackable) -> "TextureStack":
        tex = np.broadcast_to(np.asarray(color, float), (n_parts, size, size, 3)).copy()
        return cls(tex, attackable)


def tile_index(size: int, patch_size: int) -> np.ndarray:
    """Flat patch index feeding each texel of a ``size x size`` texture."""
    r = np.arange(size) % patch_size
    return (r[:, None] * patch_size + r[None, :]).ravel()


def tile_patch(patch: np.ndarray, stack: TextureStack) -> TextureStack:
    """Repeat the patch over every attackable texture; other parts are untouched."""
    patch = np.asarray(patch, dtype=float)
    P, N = patch.shape[0], stack.size
    tiled = patch.reshape(P * P, -1)[tile_index(N, P)].reshape(N, N, -1)
    tex = stack.textures.copy()
    tex[stack.attackable] = tiled
    return TextureStack(tex, stack.attackable.copy())


def tile_patch_backward(grad_textures: np.ndarray, attackable, patch_size: int) -> np.ndarray:
    """Gradient w.r.t. the patch given the gradient w.r.t. the tiled stack."""
    g = np.asarray(grad_textures)[np.asarray(attackable, bool)].sum(axis=0)
    N, C = g.shape[0], g.shape[-1]
    out = np.zeros((patch_size * patch_size, C))
    np.add.at(out, tile_index(N, patch_size), g.reshape(N * N, C))
    return out.reshape(patch_size, patch_size, C)


def _snap(x: np.ndarray) -> np.ndarray:
    # i / (n - 1) * (n - 1) can miss i by an ulp; land texel centres exactly
    r = np.rint(x)
    return np.where(np.abs(x - r) <= 8 * np.finfo(float).eps * np.maximum(1.0, r), r, x)


def bilinear_taps(u, v, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat texel indices and weights (..., 4) for align-corners bilinear lookup."""
    x = _snap(np.clip(np.asarray(u, dtype=float), 0.0, 1.0) * (width - 1))
    y = _snap(np.clip(np.asarray(v, dtype=float), 0.0, 1.0) * (height - 1))
    x0 = np.clip(np.floor(x), 0, max(width - 2, 0)).astype(int)
    y0 = np.clip(np.floor(y), 0, max(height - 2, 0)).astype(int)
    fx, fy = x - x0, y - y0
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return idx, w


def grid_sample(texture: np.ndarray, u, v) -> np.ndarray:
    """Bilinear texture lookup; ``texture`` is (H, W, C), output (*u.shape, C)."""
    texture = np.asarray(texture, dtype=float)
    H, W = texture.shape[:2]
    idx, w = bilinear_taps(u, v, H, W)
    flat = texture.reshape(H * W, -1)
    return np.einsum("...t,...tc->...c", w, flat[idx])


def grid_sample_backward(shape, u, v, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. a texture of ``shape`` (H, W, C) for upstream (..., C)."""
    H, W, C = shape
    idx, w = bilinear_taps(u, v, H, W)
    out = np.zeros((H * W, C))
    contrib = w[..., None] * np.asarray(upstream)[..., None, :]
    np.add.at(out, idx.reshape(-1), contrib.reshape(-1, C))
    return out.reshape(H, W, C)


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r2 > 0, r2 * np.log(np.where(r2 > 0, r2, 1.0)), 0.0)


@dataclass
class TPSParams:
    """Fitted thin-plate spline mapping ``sources[i]`` to ``targets[i]`` in the plane."""

    sources: np.ndarray  # (n, 2)
    targets: np.ndarray  # (n, 2)
    lam: float
    weights: np.ndarray  # (n, 2) kernel weights
    affine: np.ndarray  # (3, 2): rows are [constant, x-coefficient, y-coefficient]

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d2 = np.sum((pts[..., None, :] - self.sources) ** 2, axis=-1)
        return (self.affine[0] + pts @ self.affine[1:]) + _tps_kernel(d2) @ self.weights


def tps_fit(sources, targets, lam: float = 0.0) -> TPSParams:
    """Solve the regularised TPS system with kernel ``r^2 log r^2`` plus affine part."""
    src = np.asarray(sources, dtype=float)
    dst = np.asarray(targets, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ConfigError("sources and targets must both be (n, 2)")
    if lam < 0:
        raise ConfigError("TPS regularisation must be >= 0")
    n = len(src)
    if n < 3:
        raise ConfigError("TPS needs at least 3 control points")
    K = _tps_kernel(np.sum((src[:, None] - src[None]) ** 2, axis=-1)) + lam * np.eye(n)
    P = np.hstack([np.ones((n, 1)), src])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n], L[:n, n:], L[n:, :n] = K, P, P.T
    rhs = np.vstack([dst, np.zeros((3, 2))])
    cond = np.linalg.cond(L)
    if not np.isfinite(cond) or cond > 1e13:
        raise NumericalError(f"TPS system is singular (condition number {cond:.3g}); "
                             "control points may be collinear or repeated")
    sol = np.linalg.solve(L, rhs)
    return TPSParams(src, dst, float(lam), sol[:n], sol[n:])


def control_grid(g: int) -> np.ndarray:
    lin = np.linspace(0.0, 1.0, g)
    X, Y = np.meshgrid(lin, lin)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def _lattice_system(grid: int, lam: float):
    src = control_grid(grid)
    n = len(src)
    K = _tps_kernel(np.sum((src[:, None] - src[None]) ** 2, axis=-1)) + lam * np.eye(n)
    P = np.hstack([np.ones((n, 1)), src])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n], L[:n, n:], L[n:, :n] = K, P, P.T
    return src, L


@lru_cache(maxsize=16)
def lattice_warp_matrix(size: int, grid: int, lam: float = 0.0) -> np.ndarray:
    """(N*N, grid^2) matrix ``M`` such that the lattice TPS sends texel q to ``q + M @ disp``.

    Sources and evaluation points are fixed and the fit reproduces affine
    maps exactly, so the warp is linear in the displacements.
    """
    src, L = _lattice_system(grid, lam)
    n = len(src)
    cond = np.linalg.cond(L)
    if not np.isfinite(cond) or cond > 1e13:
        raise NumericalError(f"TPS lattice system is singular (condition number {cond:.3g})")
    U, V = uv_grid(size)
    q = np.stack([U.ravel(), V.ravel()], axis=1)
    phi = np.hstack([_tps_kernel(np.sum((q[:, None] - src[None]) ** 2, axis=-1)),
                     np.ones((len(q), 1)), q])
    # warp(q) = phi(q) @ L^-1 @ [targets; 0], and L is symmetric
    M = np.linalg.solve(L, phi.T).T[:, :n]
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class LatticeWarp:
    """TPS that moves the regular ``grid x grid`` control lattice by ``displacements``."""

    displacements: np.ndarray  # (grid^2, 2)
    grid: int
    lam: float = 0.0

    def fit(self) -> TPSParams:
        src = control_grid(self.grid)
        return tps_fit(src, src + self.displacements, self.lam)

    def __call__(self, pts) -> np.ndarray:
        return self.fit()(pts)


def tps_from_displacements(displacements, grid: int = 4, max_disp: float = 0.1,
                           lam: float = 0.0) -> LatticeWarp:
    """Warp moving the ``grid x grid`` control lattice by ``displacements`` (grid^2, 2)."""
    disp = np.asarray(displacements, dtype=float).reshape(grid * grid, 2)
    if np.any(np.abs(disp) > max_disp):
        raise ConfigError(f"TPS displacement exceeds the configured maximum {max_disp}")
    return LatticeWarp(disp, grid, float(lam))


def warp_taps(params, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear taps (N*N, 4) of the inverse-mapped warp on an N x N texture."""
    q = _texel_points(size)
    if isinstance(params, LatticeWarp):
        src = q + lattice_warp_matrix(size, params.grid, params.lam) @ params.displacements
    else:
        src = params(q)
    return bilinear_taps(src[:, 0], src[:, 1], size, size)


def tps_apply(params: TPSParams, texture: np.ndarray) -> np.ndarray:
    """Warp an (N, N, C) texture: each output texel samples the input at ``warp(q)``."""
    texture = np.asarray(texture, dtype=float)
    N = texture.shape[0]
    idx, w = warp_taps(params, N)
    flat = texture.reshape(N * N, -1)
    return np.einsum("pt,ptc->pc", w, flat[idx]).reshape(texture.shape)


def tps_apply_backward(params: TPSParams, upstream: np.ndarray) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=float)
    N = upstream.shape[0]
    idx, w = warp_taps(params, N)
    C = upstream.shape[-1]
    out = np.zeros((N * N, C))
    np.add.at(out, idx.reshape(-1), (w[..., None] * upstream.reshape(N * N, 1, C)).reshape(-1, C))
    return out.reshape(upstream.shape)


def warp_stack(stack: TextureStack, warps) -> TextureStack:
    """Apply one TPS per part (``None`` leaves that part as is)."""
    tex = stack.textures.copy()
    for k, params in enumerate(warps):
        if params is not None:
            tex[k] = tps_apply(params, tex[k])
    return TextureStack(np.clip(tex, 0.0, 1.0), stack.attackable.copy())


def _foreground(iuv: IUVMap, stack: TextureStack) -> np.ndarray:
    H, W = iuv.shape
    fg = np.zeros((H, W, stack.textures.shape[-1]))
    for k in range(stack.n_parts):
        w = iuv.weights[..., k]
        if np.any(w > 0):
            fg += w[..., None] * grid_sample(stack.textures[k], iuv.u[..., k], iuv.v[..., k])
    return fg


def _check(iuv: IUVMap, stack: TextureStack, background):
    if iuv.weights.shape[-1] != stack.n_parts:
        raise ConfigError(f"IUV map has {iuv.weights.shape[-1]} parts, stack has {stack.n_parts}")
    if background is not None and np.shape(background)[:2] != iuv.shape:
        raise ConfigError(f"background {np.shape(background)[:2]} does not match IUV map {iuv.shape}")


def composite(iuv: IUVMap, stack: TextureStack, background: np.ndarray,
              light: LightParams | float = 1.0) -> np.ndarray:
    """Part-weighted texture colour, light-scaled and clamped, alpha-blended by the mask."""
    _check(iuv, stack, background)
    scale = light.intensity if isinstance(light, LightParams) else float(light)
    m = iuv.mask[..., None]
    fg = np.clip(scale * _foreground(iuv, stack), 0.0, 1.0)
    return fg * m + np.asarray(background, dtype=float) * (1.0 - m)


def composite_backward(iuv: IUVMap, stack: TextureStack, light, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the stack textures (K, N, N, C) given d(out)/d(image)."""
    _check(iuv, stack, None)
    scale = light.intensity if isinstance(light, LightParams) else float(light)
    pre = scale * _foreground(iuv, stack)
    g_fg = np.asarray(upstream) * iuv.mask[..., None] * scale * ((pre > 0) & (pre < 1))
    out = np.zeros_like(stack.textures)
    for k in range(stack.n_parts):
        w = iuv.weights[..., k]
        if np.any(w > 0):
            out[k] = grid_sample_backward(stack.textures[k].shape, iuv.u[..., k], iuv.v[..., k],
                                          w[..., None] * g_fg)
    return out


@dataclass
class SceneOperator:
    """The whole texture chain for one scene, frozen into an affine map of the patch.

    ``pre = light * (A @ patch_flat + offset)`` is the unclamped foreground for
    every pixel, with ``A`` sparse (H*W, P*P).
    """

    A: sp.csr_matrix
    offset: np.ndarray  # (H*W, C)
    mask: np.ndarray  # (H*W,)
    background: np.ndarray  # (H*W, C)
    light: float
    shape: tuple[int, int]

    def pre_clamp(self, patch_flat: np.ndarray) -> np.ndarray:
        """patch_flat (P*P, C) or batched (B, P*P, C) -> (…, H*W, C)."""
        if patch_flat.ndim == 3:
            B, PP, C = patch_flat.shape
            y = self.A @ patch_flat.transpose(1, 0, 2).reshape(PP, B * C)
            y = y.reshape(-1, B, C).transpose(1, 0, 2)
            return self.light * (y + self.offset[None])
        return self.light * (self.A @ patch_flat + self.offset)

    def image(self, patch: np.ndarray) -> np.ndarray:
        """Rendered image(s), (H, W, C) or (B, H, W, C) when ``patch`` is batched."""
        P = patch.shape[-2]
        flat = patch.reshape(patch.shape[:-3] + (P * P, patch.shape[-1]))
        pre = self.pre_clamp(flat)
        m = self.mask[:, None]
        img = np.clip(pre, 0.0, 1.0) * m + self.background * (1.0 - m)
        return img.reshape(patch.shape[:-3] + self.shape + (patch.shape[-1],))

    def backward(self, patch: np.ndarray, grad_image: np.ndarray) -> np.ndarray:
        """d(loss)/d(patch) (P, P, C) from d(loss)/d(image) (H, W, C)."""
        P, C = patch.shape[0], patch.shape[-1]
        pre = self.pre_clamp(patch.reshape(P * P, C))
        g = grad_image.reshape(-1, C) * self.mask[:, None] * ((pre > 0) & (pre < 1)) * self.light
        return (self.A.T @ g).reshape(P, P, C)


def scene_operator(iuv: IUVMap, stack: TextureStack, warps, patch_size: int,
                   background: np.ndarray, light) -> SceneOperator:
    """Fold tile -> per-part TPS -> grid sample -> part blend into one sparse map.

    Same arithmetic as ``composite(iuv, warp_stack(tile_patch(patch, stack), warps), ...)``
    except that the warped stack is not clamped (bilinear weights are convex,
    so it stays inside [0, 1] anyway).
    """
    _check(iuv, stack, background)
    H, W = iuv.shape
    N, C = stack.size, stack.textures.shape[-1]
    tiles = tile_index(N, patch_size)
    ident = np.arange(N * N)[:, None]
    rows, cols, vals = [], [], []
    offset = np.zeros((H * W, C))
    for k in range(stack.n_parts):
        w = iuv.weights[..., k].ravel()
        pix = np.flatnonzero(w > 0)
        if pix.size == 0:
            continue
        b_idx, b_w = bilinear_taps(iuv.u[..., k].ravel()[pix], iuv.v[..., k].ravel()[pix], N, N)
        if warps is not None and warps[k] is not None:
            w_idx, w_w = warp_taps(warps[k], N)
        else:
            w_idx = np.repeat(ident, 4, axis=1)
            w_w = np.zeros((N * N, 4))
            w_w[:, 0] = 1.0
        texel = w_idx[b_idx]  # (n, 4, 4)
        weight = w[pix, None, None] * b_w[:, :, None] * w_w[b_idx]
        if stack.attackable[k]:
            rows.append(np.repeat(pix, 16))
            cols.append(tiles[texel].ravel())
            vals.append(weight.ravel())
        else:
            flat = stack.textures[k].reshape(N * N, C)
            offset[pix] += np.einsum("nab,nabc->nc", weight, flat[texel])
    if rows:
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(H * W, patch_size * patch_size))
    else:
        A = sp.csr_matrix((H * W, patch_size * patch_size))
    scale = light.intensity if isinstance(light, LightParams) else float(light)
    return SceneOperator(A, offset, iuv.mask.ravel().copy(),
                         np.asarray(background, float).reshape(H * W, C), scale, (H, W))
