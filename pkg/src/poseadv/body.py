"""Analytic articulated body: capsule skeleton, forward kinematics and IUV rendering.

The body is a set of capsules (swept spheres) hung on a joint tree.  Each
capsule carries a constant density, so the volume density field is
piecewise constant and a ray's optical depth through one capsule is simply
``density * chord``.  Rendering marches every camera ray in fixed steps,
accumulating transmittance and the per-part absorbed density, which gives
the per-pixel mask plus DensePose-style part weights and UV coordinates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "BodyShape",
    "Capsule",
    "CameraParams",
    "IUVMap",
    "LightParams",
    "PoseParams",
    "PosedBody",
    "capsule_uv",
    "camera_rays",
    "default_body",
    "default_pose_bounds",
    "load_body",
    "pose_body",
    "ray_alpha",
    "render_iuv",
    "rodrigues",
]

_EPS = 1e-12


@dataclass(frozen=True)
class Capsule:
    """A bone between two joints, rigidly attached to ``joint``'s frame."""

    joint: int
    child: int
    radius: float
    part: int
    density: float
    name: str = ""
    # reference direction (rest frame) for the angular texture coordinate
    ref: tuple[float, float, float] = (0.0, 0.0, -1.0)


@dataclass
class BodyShape:
    """Joint tree plus the capsules that give it volume.

    ``offsets[j]`` is joint ``j``'s rest position relative to its parent
    (absolute position for the root).
    """

    parents: np.ndarray
    offsets: np.ndarray
    capsules: list[Capsule]
    part_names: list[str]
    joint_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        J = len(self.parents)
        if self.offsets.shape[0] != J:
            raise ConfigError(f"{J} parents but {self.offsets.shape[0]} offsets")
        if J == 0 or self.parents[0] != -1:
            raise ConfigError("joint 0 must be the root (parent -1)")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise ConfigError(f"joint {j}: parent {self.parents[j]} must precede it")
        K = len(self.part_names)
        seen = set()
        for c in self.capsules:
            if not (0 <= c.joint < J and 0 <= c.child < J):
                raise ConfigError(f"capsule {c.name!r} references a missing joint")
            if c.radius <= 0 or c.density <= 0:
                raise ConfigError(f"capsule {c.name!r}: radius and density must be > 0")
            if not 0 <= c.part < K:
                raise ConfigError(f"capsule {c.name!r}: part {c.part} not in [0, {K})")
            if np.linalg.norm(self.rest_positions()[c.child] - self.rest_positions()[c.joint]) <= 0:
                raise ConfigError(f"capsule {c.name!r} has zero length")
            seen.add(c.part)
        if seen != set(range(K)):
            raise ConfigError(f"parts without capsules: {sorted(set(range(K)) - seen)}")
        if not self.joint_names:
            self.joint_names = [f"joint{j}" for j in range(J)]

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_parts(self) -> int:
        return len(self.part_names)

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros_like(self.offsets)
        for j, p in enumerate(self.parents):
            pos[j] = self.offsets[j] if p < 0 else pos[p] + self.offsets[j]
        return pos

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Rest-pose bounding sphere (center, radius)."""
        return pose_body(self, np.zeros(3 * self.n_joints)).bounding_sphere()

    @classmethod
    def from_dict(cls, d: dict) -> "BodyShape":
        try:
            joints = d["joints"]
            caps = [
                Capsule(
                    joint=int(c["joint"]),
                    child=int(c["child"]),
                    radius=float(c["radius"]),
                    part=int(c["part"]),
                    density=float(c["density"]),
                    name=c.get("name", ""),
                    ref=tuple(c.get("ref", (0.0, 0.0, -1.0))),
                )
                for c in d["capsules"]
            ]
            return cls(
                parents=[int(j["parent"]) for j in joints],
                offsets=[j["offset"] for j in joints],
                capsules=caps,
                part_names=list(d["parts"]),
                joint_names=[j.get("name", f"joint{i}") for i, j in enumerate(joints)],
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad body description: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "parts": list(self.part_names),
            "joints": [
                {"name": n, "parent": int(p), "offset": [float(x) for x in o]}
                for n, p, o in zip(self.joint_names, self.parents, self.offsets)
            ],
            "capsules": [
                {
                    "name": c.name,
                    "joint": c.joint,
                    "child": c.child,
                    "radius": c.radius,
                    "part": c.part,
                    "density": c.density,
                    "ref": list(c.ref),
                }
                for c in self.capsules
            ],
        }


def load_body(path: str | Path) -> BodyShape:
    try:
        with open(path) as fh:
            return BodyShape.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read body file {path}: {exc}") from exc


def default_body() -> BodyShape:
    """The shipped 17-joint, 10-part body."""
    text = resources.files("poseadv").joinpath("data/default_body.json").read_text()
    return BodyShape.from_dict(json.loads(text))


def default_pose_bounds(n_joints: int) -> tuple[np.ndarray, np.ndarray]:
    """±pi/2 on every axis, ±pi on the root orientation."""
    hi = np.full(3 * n_joints, np.pi / 2)
    hi[:3] = np.pi
    return -hi, hi


@dataclass
class PoseParams:
    """Axis-angle rotation per joint, with the box it must stay strictly inside."""

    theta: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.theta_min = np.asarray(self.theta_min, dtype=float)
        self.theta_max = np.asarray(self.theta_max, dtype=float)
        if not (self.theta.shape == self.theta_min.shape == self.theta_max.shape):
            raise ConfigError("theta and bounds must have the same length")
        if np.any(self.theta_min >= self.theta_max):
            raise ConfigError("theta_min must be < theta_max elementwise")

    def inside(self) -> bool:
        return bool(np.all((self.theta > self.theta_min) & (self.theta < self.theta_max)))


@dataclass(frozen=True)
class CameraParams:
    """Orbit camera looking at ``target`` from (azimuth, elevation, distance).

    Azimuth 0 puts the camera on the +z side of the target, i.e. in front of
    a body facing +z; positive elevation lifts it towards +y.
    """

    azimuth: float
    elevation: float
    distance: float
    width: int = 32
    height: int = 32
    fov: float = 30.0
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("image width and height must be >= 1")
        if self.distance <= 0:
            raise ConfigError("camera distance must be > 0")
        if not 0 < self.fov < 180:
            raise ConfigError("field of view must be in (0, 180) degrees")

    def eye(self) -> np.ndarray:
        az, el = np.radians(self.azimuth), np.radians(self.elevation)
        offset = np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        return np.asarray(self.target, dtype=float) + self.distance * offset


@dataclass(frozen=True)
class LightParams:
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    intensity: float = 1.0

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ConfigError("light direction must be a unit vector")


@dataclass
class PosedBody:
    """World-space capsules of a posed body.

    ``ref`` and ``binormal`` span each capsule's cross-section frame; they
    ride with the capsule's joint so the texture follows the limb.
    """

    a: np.ndarray
    b: np.ndarray
    radius: np.ndarray
    density: np.ndarray
    part: np.ndarray
    ref: np.ndarray
    binormal: np.ndarray
    n_parts: int
    joints: np.ndarray

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        pts = np.concatenate([self.a, self.b])
        r = np.concatenate([self.radius, self.radius])
        lo = (pts - r[:, None]).min(0)
        hi = (pts + r[:, None]).max(0)
        center = 0.5 * (lo + hi)
        radius = float(np.max(np.linalg.norm(pts - center, axis=1) + r))
        return center, radius

    def with_density(self, density: np.ndarray) -> "PosedBody":
        return PosedBody(
            self.a, self.b, self.radius, np.asarray(density, float), self.part,
            self.ref, self.binormal, self.n_parts, self.joints,
        )


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    """Rotation matrices from axis-angle vectors, shape (..., 3) -> (..., 3, 3)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1)[..., None, None]
    x, y, z = np.moveaxis(rotvec, -1, 0)
    zero = np.zeros_like(x)
    K = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1).reshape(rotvec.shape[:-1] + (3, 3))
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    # second-order Taylor series below 1e-8 rad
    s = np.where(small, 1.0, np.sin(safe) / safe)
    c = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + s * K + c * (K @ K)


def pose_body(shape: BodyShape, pose) -> PosedBody:
    """Forward kinematics: compose parent rotations down the joint tree.

    ``pose`` is a :class:`PoseParams` or a flat array of ``3 * J`` axis-angle
    components.  Joint ``j``'s own rotation moves its descendants, not
    itself.
    """
    theta = pose.theta if isinstance(pose, PoseParams) else np.asarray(pose, dtype=float)
    J = shape.n_joints
    if theta.shape != (3 * J,):
        raise ConfigError(f"pose has {theta.size} values, body needs {3 * J}")
    local = rodrigues(theta.reshape(J, 3))
    glob = np.empty((J, 3, 3))
    pos = np.empty((J, 3))
    for j, p in enumerate(shape.parents):
        if p < 0:
            glob[j] = local[j]
            pos[j] = shape.offsets[j]
        else:
            glob[j] = glob[p] @ local[j]
            pos[j] = pos[p] + glob[p] @ shape.offsets[j]
    caps = shape.capsules
    ja = np.array([c.joint for c in caps])
    jb = np.array([c.child for c in caps])
    a, b = pos[ja], pos[jb]
    axis = (b - a) / np.linalg.norm(b - a, axis=1, keepdims=True)
    ref = np.einsum("cij,cj->ci", glob[ja], np.array([c.ref for c in caps], dtype=float))
    ref = ref - np.sum(ref * axis, axis=1, keepdims=True) * axis
    # reference nearly parallel to the bone: fall back to the joint's x axis
    bad = np.linalg.norm(ref, axis=1) < 1e-6
    if np.any(bad):
        alt = glob[ja[bad]][:, :, 0]
        ref[bad] = alt - np.sum(alt * axis[bad], axis=1, keepdims=True) * axis[bad]
    ref /= np.linalg.norm(ref, axis=1, keepdims=True)
    return PosedBody(
        a=a,
        b=b,
        radius=np.array([c.radius for c in caps]),
        density=np.array([c.density for c in caps]),
        part=np.array([c.part for c in caps]),
        ref=ref,
        binormal=np.cross(axis, ref),
        n_parts=shape.n_parts,
        joints=pos,
    )


def _capsule_uv(a, b, ref, binormal, pts):
    """Vectorised texture coordinates; all array arguments broadcast to (..., 3)."""
    ba = b - a
    L2 = np.sum(ba * ba, axis=-1)
    ap = pts - a
    s = np.sum(ap * ba, axis=-1) / L2
    v = np.clip(s, 0.0, 1.0)
    q = ap - s[..., None] * ba
    u = np.arctan2(np.sum(q * binormal, axis=-1), np.sum(q * ref, axis=-1)) / (2 * np.pi)
    u = np.mod(u, 1.0)
    u = np.where(u >= 1.0, 0.0, u)
    return u, v


def capsule_uv(posed: PosedBody, index: int, point) -> tuple[float, float]:
    """(u, v) of a point near capsule ``index``.

    ``v`` is the clamped fraction along the axis from the joint end, ``u``
    the angle around the axis (measured from the capsule's reference
    direction) divided by 2*pi, in [0, 1).
    """
    a, b = posed.a[index], posed.b[index]
    if np.linalg.norm(b - a) < _EPS:
        raise ConfigError("capsule axis has zero length")
    u, v = _capsule_uv(a, b, posed.ref[index], posed.binormal[index], np.asarray(point, float))
    return float(u), float(v)


def _ray_capsule_intervals(o, d, a, b, r):
    """Entry/exit distances of rays (R,3) against capsules (C,3); (R, C) each.

    Misses are reported as (inf, -inf).  A capsule is convex, so the union of
    its cylinder and end-sphere intervals is one interval.
    """
    ba = b - a
    L = np.linalg.norm(ba, axis=1)
    axis = ba / L[:, None]
    oa = o[:, None, :] - a[None, :, :]
    da = d @ axis.T
    oaa = np.einsum("rck,ck->rc", oa, axis)
    d_perp = d[:, None, :] - da[..., None] * axis[None]
    oa_perp = oa - oaa[..., None] * axis[None]
    A = np.sum(d_perp**2, axis=-1)
    B = 2 * np.sum(d_perp * oa_perp, axis=-1)
    Cq = np.sum(oa_perp**2, axis=-1) - r**2
    disc = B * B - 4 * A * Cq
    parallel = A < 1e-14
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        c0 = np.where(parallel, -np.inf, (-B - sq) / (2 * A))
        c1 = np.where(parallel, np.inf, (-B + sq) / (2 * A))
        cyl_ok = np.where(parallel, Cq < 0, disc > 0)
        # slab 0 <= s <= L along the axis
        z0 = np.where(np.abs(da) < 1e-14, -np.inf, (0 - oaa) / da)
        z1 = np.where(np.abs(da) < 1e-14, np.inf, (L - oaa) / da)
    in_slab = (oaa >= 0) & (oaa <= L)
    slab_lo = np.where(np.abs(da) < 1e-14, np.where(in_slab, -np.inf, np.inf), np.minimum(z0, z1))
    slab_hi = np.where(np.abs(da) < 1e-14, np.where(in_slab, np.inf, -np.inf), np.maximum(z0, z1))
    lo = np.where(cyl_ok, np.maximum(c0, slab_lo), np.inf)
    hi = np.where(cyl_ok, np.minimum(c1, slab_hi), -np.inf)
    lo, hi = np.where(lo < hi, lo, np.inf), np.where(lo < hi, hi, -np.inf)
    for centre in (a, b):
        oc = o[:, None, :] - centre[None]
        bb = np.sum(d[:, None, :] * oc, axis=-1)
        cc = np.sum(oc * oc, axis=-1) - r**2
        disc = bb * bb - cc
        hit = disc > 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        lo = np.where(hit, np.minimum(lo, -bb - sq), lo)
        hi = np.where(hit, np.maximum(hi, -bb + sq), hi)
    return np.maximum(lo, 0.0), hi


def _march(posed: PosedBody, o, d, delta, t_near, n_steps):
    """Fixed-step accumulation for rays (R, 3) starting at ``t_near`` (R,).

    Each step contributes the optical depth of that step's segment.  The
    density is piecewise constant, so the step's optical depth is
    ``density * overlap`` summed over the capsules it crosses.
    Returns mask (R,), part weights (R, K), u (R, K), v (R, K).
    """
    R, K = len(o), posed.n_parts
    mask = np.zeros(R)
    weights = np.zeros((R, K))
    uu = np.zeros((R, K))
    vv = np.zeros((R, K))
    if R == 0:
        return mask, weights, uu, vv
    t0, t1 = _ray_capsule_intervals(o, d, posed.a, posed.b, posed.radius)
    hit = np.any(t1 > t0, axis=1)
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return mask, weights, uu, vv
    t0, t1 = t0[idx], t1[idx]
    # skip the empty steps before the first entry; the grid stays anchored at t_near
    first_t = np.min(t0, axis=1)
    last_t = np.max(np.where(t1 > t0, t1, -np.inf), axis=1)
    j0 = np.clip(np.floor((first_t - t_near[idx]) / delta), 0, n_steps - 1)
    j1 = np.clip(np.floor((last_t - t_near[idx]) / delta), 0, n_steps - 1)
    n_local = int(np.max(j1 - j0)) + 1
    starts = t_near[idx, None] + delta * (j0[:, None] + np.arange(n_local)[None, :])  # (r, N)
    ends = starts + delta
    overlap = np.minimum(t1[:, :, None], ends[:, None, :]) - np.maximum(t0[:, :, None], starts[:, None, :])
    tau_c = posed.density[None, :, None] * np.maximum(overlap, 0.0)  # (r, C, N)
    tau = tau_c.sum(axis=1)  # (r, N)
    trans = np.exp(-(np.cumsum(tau, axis=1) - tau))
    absorbed = trans * -np.expm1(-tau)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(tau[:, None, :] > 0, tau_c / tau[:, None, :], 0.0)
    w_caps = np.einsum("rcn,rn->rc", share, absorbed)
    onehot = np.eye(K)[posed.part]  # (C, K)
    w_parts = w_caps @ onehot
    total = w_parts.sum(axis=1)
    m = -np.expm1(-tau.sum(axis=1))
    good = (m > 0) & (total > 0)
    mask[idx[good]] = m[good]
    weights[idx[good]] = w_parts[good] / total[good, None]

    # texture coordinates at the first entry into each contributing part
    entered = (w_caps > 0) & (t1 > t0)
    entry = np.where(entered, t0, np.inf)
    for k in range(K):
        cols = np.flatnonzero(posed.part == k)
        ek = entry[:, cols]
        first = np.argmin(ek, axis=1)
        ok = np.isfinite(ek[np.arange(len(idx)), first]) & good & (weights[idx, k] > 0)
        if not np.any(ok):
            continue
        c = cols[first[ok]]
        rows = idx[ok]
        pts = o[rows] + ek[ok, first[ok]][:, None] * d[rows]
        u, v = _capsule_uv(posed.a[c], posed.b[c], posed.ref[c], posed.binormal[c], pts)
        uu[rows, k] = u
        vv[rows, k] = v
    return mask, weights, uu, vv


def default_step(posed: PosedBody) -> float:
    return 2 * posed.bounding_sphere()[1] / 128


def ray_alpha(posed: PosedBody, origin, direction, delta: float | None = None):
    """March a single ray: returns (mask, {part: (weight, u, v)}).

    The returned mask is ``1 - transmittance``; the dict is empty on a miss.
    """
    o = np.asarray(origin, dtype=float)[None]
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1) > 1e-9:
        raise ConfigError("ray direction must be normalised")
    d = d[None]
    delta = default_step(posed) if delta is None else float(delta)
    if delta <= 0:
        raise ConfigError("step size must be > 0")
    t_near, n_steps = _march_range(posed, o, d, delta)
    m, w, u, v = _march(posed, o, d, delta, t_near, n_steps)
    contrib = {int(k): (float(w[0, k]), float(u[0, k]), float(v[0, k])) for k in np.flatnonzero(w[0] > 0)}
    return float(m[0]), contrib


def _march_range(posed, o, d, delta):
    center, radius = posed.bounding_sphere()
    radius *= 1.0 + 1e-9
    oc = o - center
    bb = np.sum(oc * d, axis=1)
    t_near = np.maximum(-bb - radius, 0.0)
    n_steps = int(np.ceil(2 * radius / delta)) + 1
    return t_near, n_steps


@dataclass
class IUVMap:
    """Per-pixel mask and dense per-part (weight, u, v) channels.

    Arrays: ``mask`` (H, W); ``weights``, ``u``, ``v`` (H, W, K).  A part
    contributes at a pixel iff its weight is > 0.
    """

    mask: np.ndarray
    weights: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def contributions(self, row: int, col: int) -> list[tuple[int, float, float, float]]:
        w = self.weights[row, col]
        return [(int(k), float(w[k]), float(self.u[row, col, k]), float(self.v[row, col, k]))
                for k in np.flatnonzero(w > 0)]

    def bbox(self, threshold: float = 0.5) -> tuple[float, float, float, float] | None:
        """Tight pixel-extent box (x1, y1, x2, y2) of pixels with mask > threshold."""
        ys, xs = np.nonzero(self.mask > threshold)
        if ys.size == 0:
            return None
        return float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1)


def camera_rays(camera: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole rays through pixel centres, row-major; origins (3,), dirs (H*W, 3)."""
    eye = camera.eye()
    fwd = np.asarray(camera.target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    up_world = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up_world)
    if np.linalg.norm(right) < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    th = np.tan(np.radians(camera.fov) / 2)
    W, H = camera.width, camera.height
    xs = ((np.arange(W) + 0.5) / W * 2 - 1) * th * W / H
    ys = (1 - (np.arange(H) + 0.5) / H * 2) * th
    X, Y = np.meshgrid(xs, ys)
    dirs = fwd + X[..., None] * right + Y[..., None] * up
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return eye, dirs


def render_iuv(posed: PosedBody, camera: CameraParams, delta: float | None = None) -> IUVMap:
    """Ray-march one ray per pixel into an :class:`IUVMap`."""
    center, radius = posed.bounding_sphere()
    eye, dirs = camera_rays(camera)
    if np.linalg.norm(eye - center) <= radius:
        raise ConfigError("camera is inside the body's bounding sphere")
    delta = default_step(posed) if delta is None else float(delta)
    if delta <= 0:
        raise ConfigError("step size must be > 0")
    origins = np.broadcast_to(eye, dirs.shape)
    t_near, n_steps = _march_range(posed, origins, dirs, delta)
    # rays that miss the bounding sphere cannot hit anything
    oc = eye - center
    bb = dirs @ oc
    near_sphere = bb * bb - (oc @ oc - radius**2) > 0
    sel = np.flatnonzero(near_sphere)
    H, W, K = camera.height, camera.width, posed.n_parts
    m = np.zeros(H * W)
    w = np.zeros((H * W, K))
    u = np.zeros((H * W, K))
    v = np.zeros((H * W, K))
    m[sel], w[sel], u[sel], v[sel] = _march(posed, origins[sel], dirs[sel], delta, t_near[sel], n_steps)
    return IUVMap(m.reshape(H, W), w.reshape(H, W, K), u.reshape(H, W, K), v.reshape(H, W, K))
