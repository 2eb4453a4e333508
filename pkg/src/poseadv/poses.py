"""Synthetic motion clips for the default 17-joint body.

A stand-in for a motion-capture corpus: each clip is one motion family
(walk, idle, reach, wave, crouch) with its own random amplitudes and phase,
sampled over a short frame range.  The clip id of every pose is kept
so corpora can be split into disjoint sets of clips.
"""
from __future__ import annotations

import numpy as np

from .body import default_pose_bounds

JOINTS = {
    name: i
    for i, name in enumerate(
        "pelvis spine chest neck head l_shoulder l_elbow l_wrist r_shoulder r_elbow r_wrist "
        "l_hip l_knee l_ankle r_hip r_knee r_ankle".split()
    )
}
N_JOINTS = len(JOINTS)
FAMILIES = ("walk", "idle", "reach", "wave", "crouch")


def _set(theta, joint, axis, value):
    theta[:, 3 * JOINTS[joint] + "xyz".index(axis)] += value


def _clip(family: str, n: int, rng: np.random.Generator) -> np.ndarray:
    theta = np.zeros((n, 3 * N_JOINTS))
    phase = rng.uniform(0, 2 * np.pi) + np.linspace(0, rng.uniform(1.0, 2.5) * np.pi, n)
    # resting arm abduction (left arm outwards is +z rotation, right is -z)
    rest_abd = rng.uniform(0.15, 0.45)
    _set(theta, "l_shoulder", "z", rest_abd)
    _set(theta, "r_shoulder", "z", -rest_abd)
    _set(theta, "l_elbow", "x", -rng.uniform(0.05, 0.3))
    _set(theta, "r_elbow", "x", -rng.uniform(0.05, 0.3))
    if family == "walk":
        amp = rng.uniform(0.2, 0.55)
        s = np.sin(phase)
        _set(theta, "l_hip", "x", -amp * s)
        _set(theta, "r_hip", "x", amp * s)
        _set(theta, "l_knee", "x", 0.1 + 1.2 * amp * np.maximum(0, np.sin(phase + 1.2)))
        _set(theta, "r_knee", "x", 0.1 + 1.2 * amp * np.maximum(0, np.sin(phase + 1.2 + np.pi)))
        _set(theta, "l_shoulder", "x", 0.7 * amp * s)
        _set(theta, "r_shoulder", "x", -0.7 * amp * s)
        _set(theta, "spine", "y", 0.15 * amp * s)
    elif family == "idle":
        _set(theta, "spine", "x", rng.uniform(-0.1, 0.1) + 0.03 * np.sin(phase))
        _set(theta, "l_hip", "z", rng.uniform(0.0, 0.15))
        _set(theta, "r_hip", "z", -rng.uniform(0.0, 0.15))
    elif family == "reach":
        side = rng.choice(["l", "r"])
        lift = rng.uniform(0.5, 1.2) * (0.6 + 0.4 * np.sin(phase))
        _set(theta, f"{side}_shoulder", "x", -lift)
        _set(theta, f"{side}_elbow", "x", -rng.uniform(0.0, 0.4))
        _set(theta, "spine", "x", 0.1 * lift)
    elif family == "wave":
        side = rng.choice(["l", "r"])
        sign = 1.0 if side == "l" else -1.0
        _set(theta, f"{side}_shoulder", "z", sign * rng.uniform(0.5, 0.9))
        _set(theta, f"{side}_elbow", "z", sign * (rng.uniform(0.4, 0.9) + 0.3 * np.sin(2 * phase)))
    elif family == "crouch":
        depth = rng.uniform(0.2, 0.7) * (0.5 + 0.5 * np.sin(phase))
        _set(theta, "l_hip", "x", -depth)
        _set(theta, "r_hip", "x", -depth)
        _set(theta, "l_knee", "x", 1.8 * depth)
        _set(theta, "r_knee", "x", 1.8 * depth)
        _set(theta, "spine", "x", 0.4 * depth)
        _set(theta, "l_shoulder", "x", -0.5 * depth)
        _set(theta, "r_shoulder", "x", -0.5 * depth)
    else:
        raise ValueError(f"unknown motion family {family!r}")
    _set(theta, "pelvis", "y", rng.uniform(-0.3, 0.3))
    theta += rng.normal(0.0, 0.03, theta.shape)
    return theta


def synthetic_corpus(n_clips: int = 100, frames: int = 20, seed: int = 0):
    """Return (poses (n_clips*frames, 51), clip ids, theta_min, theta_max)."""
    rng = np.random.default_rng(seed)
    lo, hi = default_pose_bounds(N_JOINTS)
    poses, clips = [], []
    for c in range(n_clips):
        fam = FAMILIES[c % len(FAMILIES)]
        poses.append(_clip(fam, frames, rng))
        clips.extend([c] * frames)
    theta = np.clip(np.concatenate(poses), lo * 0.98, hi * 0.98)
    return theta, np.array(clips), lo, hi


def split_by_clip(clips: np.ndarray, fraction: float = 0.5, seed: int = 0):
    """Boolean masks (train, test) assigning whole clips to one side only."""
    ids = np.unique(clips)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(ids)[: int(round(fraction * len(ids)))]
    train = np.isin(clips, chosen)
    return train, ~train
