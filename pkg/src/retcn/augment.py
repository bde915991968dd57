"""Training-time skeleton augmentation: block occlusion, per-frame random
rotation and frame jittering, plus an ordered pipeline with named presets.

Every function takes a ``numpy.random.Generator`` and a
:class:`~retcn.data.SkeletonSequence` and returns a new sequence; inputs are
never modified and the label is carried through.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .data import SkeletonDataset, SkeletonSequence
from .errors import BadChannelCount, BadConfig
from .tensor import make_rng

OCCLUSION_MODES = ("joint", "frame", "mixed")


@dataclass(frozen=True)
class OcclusionConfig:
    p: float = 0.5
    l_min: int = 10
    l_max: int = 50
    mode: str = "frame"
    max_skip: int = 10

    def validate(self):
        if not 0.0 <= self.p <= 1.0:
            raise BadConfig(f"occlusion probability must lie in [0, 1], got {self.p}")
        if not 1 <= self.l_min <= self.l_max:
            raise BadConfig(f"need 1 <= l_min <= l_max, got [{self.l_min}, {self.l_max}]")
        if self.max_skip < 1:
            raise BadConfig("max_skip must be >= 1")
        if self.mode not in OCCLUSION_MODES:
            raise BadConfig(f"occlusion mode must be one of {OCCLUSION_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class RotationConfig:
    theta: float = 0.3

    def validate(self):
        if not np.isfinite(self.theta) or self.theta < 0:
            raise BadConfig(f"rotation bound must be finite and >= 0, got {self.theta}")


@dataclass(frozen=True)
class JitterConfig:
    sigma: float = 0.05
    p_frame: float = 0.1

    def validate(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise BadConfig(f"jitter sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.p_frame <= 1.0:
            raise BadConfig(f"frame probability must lie in [0, 1], got {self.p_frame}")


AugConfig = Union[OcclusionConfig, RotationConfig, JitterConfig]

PRESETS = {
    "none": (),
    "R": (RotationConfig(0.3),),
    "R+N": (RotationConfig(0.3),
            OcclusionConfig(p=0.5, l_min=10, l_max=50, mode="mixed"),
            JitterConfig(sigma=0.05, p_frame=0.1)),
}


def preset(name: str) -> tuple:
    try:
        return PRESETS[name]
    except KeyError:
        raise BadConfig(f"unknown augmentation preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- occlusion ----------------------------------------------------------------

def occlusion_blocks(rng, t_len, cfg: OcclusionConfig):
    """Walk the frame cursor once and return the ``(start, length)`` blocks.

    A candidate block at the cursor is emitted with probability ``p``; a
    rejected candidate advances the cursor by ``l_min``. After an emitted
    block the cursor skips 1..max_skip frames, clamped to what remains.
    """
    blocks = []
    cur = 0
    while cur < t_len:
        remaining = t_len - cur
        if remaining < cfg.l_min:
            break
        if rng.random() >= cfg.p:
            cur += cfg.l_min
            continue
        length = int(rng.integers(cfg.l_min, min(cfg.l_max, remaining) + 1))
        blocks.append((cur, length))
        cur += length
        if cur >= t_len:
            break
        cur += int(rng.integers(1, min(cfg.max_skip, t_len - cur) + 1))
    return blocks


def occlude(rng, d: SkeletonSequence, cfg: OcclusionConfig) -> SkeletonSequence:
    cfg.validate()
    out = d.data.copy()
    _, t_len, v, m_count = out.shape
    max_subset = max(1, v // 2)
    for m in range(m_count):
        for start, length in occlusion_blocks(rng, t_len, cfg):
            mode = cfg.mode
            if mode == "mixed":
                mode = "joint" if rng.random() < 0.5 else "frame"
            if mode == "frame":
                out[:, start:start + length, :, m] = 0
                continue
            for t in range(start, start + length):
                size = int(rng.integers(1, max_subset + 1))
                joints = rng.choice(v, size=size, replace=False)
                out[:, t, joints, m] = 0
    return d.replace_data(out)


# -- rotation -----------------------------------------------------------------

def rotation_matrices(angles: np.ndarray) -> np.ndarray:
    """(T, 3) Euler angles (about x, y, z) -> (T, 3, 3) matrices Rz @ Ry @ Rx."""
    angles = np.asarray(angles, dtype=np.float64)
    ax, ay, az = angles[:, 0], angles[:, 1], angles[:, 2]
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    one, zero = np.ones_like(ax), np.zeros_like(ax)
    rx = np.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx], axis=1).reshape(-1, 3, 3)
    ry = np.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy], axis=1).reshape(-1, 3, 3)
    rz = np.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one], axis=1).reshape(-1, 3, 3)
    return rz @ ry @ rx


def rotate_with_angles(d: SkeletonSequence, angles: np.ndarray) -> SkeletonSequence:
    if d.data.shape[0] != 3:
        raise BadChannelCount(f"rotation needs 3 coordinate channels, got {d.data.shape[0]}")
    r = rotation_matrices(angles)
    out = np.einsum("tij,jtvm->itvm", r, d.data.astype(np.float64))
    return d.replace_data(out.astype(d.data.dtype))


def rotate(rng, d: SkeletonSequence, cfg: RotationConfig) -> SkeletonSequence:
    cfg.validate()
    if d.data.shape[0] != 3:
        raise BadChannelCount(f"rotation needs 3 coordinate channels, got {d.data.shape[0]}")
    angles = rng.uniform(-cfg.theta, cfg.theta, size=(d.data.shape[1], 3))
    return rotate_with_angles(d, angles)


# -- jitter -------------------------------------------------------------------

def jitter(rng, d: SkeletonSequence, cfg: JitterConfig) -> SkeletonSequence:
    cfg.validate()
    if cfg.sigma == 0 or cfg.p_frame == 0:
        return d.replace_data(d.data.copy())
    c, t_len, v, m_count = d.data.shape
    out = d.data.copy()
    # one selection draw per (person, frame), then noise for the picked frames
    picked = rng.random((m_count, t_len)) < cfg.p_frame
    ms, ts = np.nonzero(picked)
    noise = rng.normal(0.0, cfg.sigma, size=(len(ms), c, v))
    out[:, ts, :, ms] += noise.astype(out.dtype)  # advanced indices first: (k, C, V)
    return d.replace_data(out)


# -- composition --------------------------------------------------------------

_OPS = {OcclusionConfig: occlude, RotationConfig: rotate, JitterConfig: jitter}


def pipeline(rng, d: SkeletonSequence, configs: Sequence[AugConfig]) -> SkeletonSequence:
    """Apply augmentations in the declared order (a preset name also works)."""
    if isinstance(configs, str):
        configs = preset(configs)
    for cfg in configs:
        if type(cfg) not in _OPS:
            raise BadConfig(f"not an augmentation config: {cfg!r}")
        cfg.validate()
    out = d
    for cfg in configs:
        out = _OPS[type(cfg)](rng, out, cfg)
    if out is d:
        out = d.replace_data(d.data.copy())
    return out


def augment_dataset(ds: SkeletonDataset, configs, seed, stream=()) -> SkeletonDataset:
    """Augment every sample with its own stream ``(seed, *stream, index)``."""
    if isinstance(configs, str):
        configs = preset(configs)
    idx = np.arange(len(ds))
    return ds.with_data(augment_batch(ds.data, ds.labels, configs, seed, stream, idx))


def augment_batch(data: np.ndarray, labels, configs, seed, stream, indices) -> np.ndarray:
    """Augment a (B, C, T, V, M) batch. ``indices`` are dataset positions, so
    each sample's stream ``(seed, *stream, index)`` is independent of batching."""
    if isinstance(configs, str):
        configs = preset(configs)
    if not configs:
        return data.copy()
    out = np.empty_like(data)
    for b, i in enumerate(indices):
        seq = SkeletonSequence(data[b], int(labels[b]))
        out[b] = pipeline(make_rng(seed, *stream, int(i)), seq, configs).data
    return out
