"""Evaluation-time corruption protocols and robustness sweeps.

Protocols: ``frame`` (one block of consecutive frames zeroed), ``part`` (a
body part zeroed in every frame), ``random`` (each joint observation zeroed
independently) and ``jitter`` (each joint observation perturbed
independently). Nothing here shares state with training-time augmentation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import SkeletonDataset, SkeletonSequence, dataset_hash
from .errors import BadConfig, BadLength, BadProbability, JointOutOfRange
from .tensor import make_rng

# NTU RGB+D 25-joint skeleton, 0-based indices.
NTU25_PARTS = {
    "trunk": [0, 1, 2, 3, 20],
    "left_arm": [8, 9, 10, 11, 23, 24],
    "right_arm": [4, 5, 6, 7, 21, 22],
    "two_hands": [21, 22, 23, 24],
    "two_legs": [12, 13, 14, 15, 16, 17, 18, 19],
}

PROTOCOLS = ("frame", "part", "random", "jitter")

DEFAULT_GRIDS = {
    "frame": [0, 10, 20, 30, 40, 50],
    "part": ["none", "left_arm", "right_arm", "two_hands", "two_legs", "trunk"],
    "random": [0, 0.2, 0.3, 0.4, 0.5, 0.6],
    "jitter": [0, 0.02, 0.04, 0.06, 0.08, 0.10],
}


@dataclass(frozen=True)
class BodyPart:
    name: str
    joints: tuple

    def validate(self, num_joints):
        if not self.joints:
            raise JointOutOfRange(f"body part {self.name!r} has no joints")
        bad = [j for j in self.joints if not 0 <= j < num_joints]
        if bad:
            raise JointOutOfRange(f"body part {self.name!r} joints {bad} out of range for V={num_joints}")


def body_parts(part_map: Dict[str, Sequence[int]]) -> Dict[str, BodyPart]:
    return {name: BodyPart(name, tuple(int(j) for j in joints)) for name, joints in part_map.items()}


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise BadProbability(f"probability must lie in [0, 1], got {p}")


def occlude_frames_eval(rng, d: SkeletonSequence, n_frames: int) -> SkeletonSequence:
    t_len = d.data.shape[1]
    if not 0 <= n_frames <= t_len:
        raise BadLength(f"cannot occlude {n_frames} frames of a {t_len}-frame sequence")
    out = d.data.copy()
    if n_frames:
        start = int(rng.integers(0, t_len - n_frames + 1))
        out[:, start:start + n_frames] = 0
    return d.replace_data(out)


def occlude_part_eval(d: SkeletonSequence, part: BodyPart) -> SkeletonSequence:
    part.validate(d.data.shape[2])
    out = d.data.copy()
    out[:, :, list(part.joints), :] = 0
    return d.replace_data(out)


def occlude_random_eval(rng, d: SkeletonSequence, p: float) -> SkeletonSequence:
    _check_p(p)
    _, t_len, v, m = d.data.shape
    hit = rng.random((t_len, v, m)) < p
    out = np.where(hit[None], np.zeros((), d.data.dtype), d.data)
    return d.replace_data(out)


def jitter_eval(rng, d: SkeletonSequence, p: float, sigma: float) -> SkeletonSequence:
    _check_p(p)
    if sigma < 0:
        raise BadConfig(f"jitter sigma must be >= 0, got {sigma}")
    if p == 0 or sigma == 0:
        return d.replace_data(d.data.copy())
    c, t_len, v, m = d.data.shape
    hit = rng.random((t_len, v, m)) < p
    noise = rng.normal(0.0, sigma, size=(c, t_len, v, m))
    out = np.where(hit[None], d.data + noise.astype(d.data.dtype), d.data)
    return d.replace_data(out)


def is_clean_level(protocol, level) -> bool:
    return level in ("none", None) if protocol == "part" else float(level) == 0.0


def corrupt_dataset(ds: SkeletonDataset, protocol: str, level, rng,
                    parts: Optional[Dict[str, Sequence[int]]] = None,
                    sigma: float = 0.1) -> SkeletonDataset:
    """Apply one protocol at one level to every sample of ``ds``."""
    if protocol not in PROTOCOLS:
        raise BadConfig(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if is_clean_level(protocol, level):
        return ds.with_data(ds.data.copy())
    if protocol == "part":
        part_map = parts if parts is not None else ds.parts
        if not part_map:
            raise BadConfig("part protocol needs a part map (dataset header or --parts file)")
        if level not in part_map:
            raise BadConfig(f"unknown body part {level!r}; available: {sorted(part_map)}")
        part = BodyPart(level, tuple(part_map[level]))
        fn = lambda seq: occlude_part_eval(seq, part)  # noqa: E731
    elif protocol == "frame":
        fn = lambda seq: occlude_frames_eval(rng, seq, int(level))  # noqa: E731
    elif protocol == "random":
        fn = lambda seq: occlude_random_eval(rng, seq, float(level))  # noqa: E731
    else:
        fn = lambda seq: jitter_eval(rng, seq, float(level), sigma)  # noqa: E731
    out = np.empty_like(ds.data)
    for i in range(len(ds)):
        out[i] = fn(ds[i]).data
    return ds.with_data(out)


@dataclass
class SweepRow:
    level: object
    accuracy: float


@dataclass
class SweepTable:
    protocol: str
    seed: int
    dataset_hash: str
    rows: List[SweepRow] = field(default_factory=list)
    sigma: Optional[float] = None

    def accuracies(self):
        return [r.accuracy for r in self.rows]

    def to_text(self) -> str:
        head = f"# protocol={self.protocol} seed={self.seed} dataset={self.dataset_hash[:12]}"
        if self.sigma is not None:
            head += f" sigma={self.sigma}"
        lines = [head, f"{'level':>10}  {'accuracy':>8}"]
        lines += [f"{str(r.level):>10}  {r.accuracy:>8.4f}" for r in self.rows]
        return "\n".join(lines)

    def to_records(self) -> List[dict]:
        return [{"record": "sweep", "protocol": self.protocol, "level": r.level,
                 "accuracy": r.accuracy, "seed": self.seed} for r in self.rows]


def robustness_sweep(model, testset: SkeletonDataset, protocol: str, grid=None, seed: int = 0,
                     sigma: float = 0.1, parts=None, batch_size: int = 64) -> SweepTable:
    """Evaluate ``model`` on a freshly corrupted copy of ``testset`` per grid level.

    Level ``i`` draws from the stream ``(seed, protocol, i)``, so rows are
    independent of each other and of evaluation order.
    """
    from .train import evaluate

    if protocol not in PROTOCOLS:
        raise BadConfig(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    grid = list(DEFAULT_GRIDS[protocol] if grid is None else grid)
    table = SweepTable(protocol, seed, dataset_hash(testset),
                       sigma=sigma if protocol == "jitter" else None)
    for i, level in enumerate(grid):
        rng = make_rng(seed, PROTOCOLS.index(protocol), i)
        corrupted = corrupt_dataset(testset, protocol, level, rng, parts=parts, sigma=sigma)
        table.rows.append(SweepRow(level, evaluate(model, corrupted, batch_size=batch_size).accuracy))
    return table
