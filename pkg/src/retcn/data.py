"""Skeleton datasets: in-memory container, the SKL4 binary format and a
synthetic action generator.

SKL4 layout (all little-endian)::

    magic       4s   b"SKL4"
    version     u16  1
    flags       u16  bit 0: part map present
    num_samples u32
    num_val     u32  the last ``num_val`` samples form the validation split
    C T V M     4 x u32
    num_classes u32
    layout      4s   b"MCTV"  payload axis order, slowest to fastest
    [part map]  u32 count, then per part: u16 name length, utf-8 name,
                u32 joint count, u32 joint indices
    samples     num_samples x (u16 label, f32 payload[M][C][T][V])
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

from .errors import BadConfig, BadHeader, BadLabel, BadMagic, DimOverflow, TruncatedFile
from .tensor import DTYPE, make_rng

MAGIC = b"SKL4"
VERSION = 1
LAYOUT = b"MCTV"
MAX_PAYLOAD_BYTES = 2 ** 31
_HEADER = struct.Struct("<4sHHIIIIIII4s")


@dataclass
class SkeletonSequence:
    data: np.ndarray  # (C, T, V, M)
    label: int

    @property
    def shape(self):
        return self.data.shape

    def replace_data(self, data):
        return SkeletonSequence(data, self.label)


@dataclass
class SkeletonDataset:
    data: np.ndarray  # (N, C, T, V, M) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int
    parts: Optional[Dict[str, List[int]]] = None
    num_val: int = 0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 5:
            raise BadConfig(f"dataset array must be (N, C, T, V, M), got {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise BadConfig("labels must have one entry per sample")
        if self.num_classes < 1:
            raise BadConfig("num_classes must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise BadLabel(f"labels must lie in [0, {self.num_classes})")
        if not 0 <= self.num_val <= len(self):
            raise BadConfig(f"num_val {self.num_val} out of range for {len(self)} samples")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i) -> SkeletonSequence:
        return SkeletonSequence(self.data[i], int(self.labels[i]))

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return tuple(self.data.shape[1:])

    def subset(self, idx) -> "SkeletonDataset":
        idx = np.asarray(idx)
        return SkeletonDataset(self.data[idx], self.labels[idx], self.num_classes, self.parts)

    def train_split(self) -> "SkeletonDataset":
        return self.subset(np.arange(len(self) - self.num_val))

    def val_split(self) -> "SkeletonDataset":
        return self.subset(np.arange(len(self) - self.num_val, len(self)))

    def with_data(self, data) -> "SkeletonDataset":
        return SkeletonDataset(data, self.labels.copy(), self.num_classes, self.parts, self.num_val)


def concat_splits(train: SkeletonDataset, val: SkeletonDataset) -> SkeletonDataset:
    return SkeletonDataset(np.concatenate([train.data, val.data]),
                           np.concatenate([train.labels, val.labels]),
                           train.num_classes, train.parts, num_val=len(val))


class DatasetAdapter(Protocol):
    """Conversion path for real corpora (NTU ``.skeleton``, NW-UCLA, ...).

    An adapter parses its native files into ``(N, 3, T, V, M)`` coordinates,
    resampled or padded to a common T, plus integer labels, and returns a
    :class:`SkeletonDataset` carrying the skeleton's part map. No concrete
    adapters ship with the package.
    """

    def load(self, path: str) -> SkeletonDataset: ...


# -- binary format ------------------------------------------------------------

def _record_dtype(c, t, v, m):
    return np.dtype([("label", "<u2"), ("payload", "<f4", (m, c, t, v))])


def dumps(ds: SkeletonDataset) -> bytes:
    buf = io.BytesIO()
    _write(buf, ds)
    return buf.getvalue()


def _write(f, ds):
    n = len(ds)
    c, t, v, m = ds.dims
    if ds.num_classes > 65536:
        raise BadConfig("labels are stored as u16; at most 65536 classes")
    flags = 1 if ds.parts else 0
    f.write(_HEADER.pack(MAGIC, VERSION, flags, n, ds.num_val, c, t, v, m, ds.num_classes, LAYOUT))
    if ds.parts:
        f.write(struct.pack("<I", len(ds.parts)))
        for name, joints in ds.parts.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(struct.pack(f"<I{len(joints)}I", len(joints), *joints))
    rec = np.empty(n, dtype=_record_dtype(c, t, v, m))
    rec["label"] = ds.labels
    rec["payload"] = ds.data.transpose(0, 4, 1, 2, 3)
    f.write(rec.tobytes())


def write_dataset(path, ds: SkeletonDataset) -> None:
    with open(path, "wb") as f:
        _write(f, ds)


def _read_exact(f, size, what):
    raw = f.read(size)
    if len(raw) != size:
        raise TruncatedFile(f"file ends inside the {what}")
    return raw


def _read(f) -> SkeletonDataset:
    head = f.read(_HEADER.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise BadMagic(f"not an SKL4 file (magic {head[:4]!r})")
    if len(head) != _HEADER.size:
        raise TruncatedFile("file ends inside the header")
    magic, version, flags, n, num_val, c, t, v, m, k, layout = _HEADER.unpack(head)
    if version != VERSION:
        raise BadMagic(f"unsupported SKL4 version {version}")
    if layout != LAYOUT:
        raise BadHeader(f"unsupported payload layout {layout!r}")
    if min(c, t, v, m, k) < 1:
        raise BadHeader(f"header dims must be >= 1: C={c} T={t} V={v} M={m} classes={k}")
    payload = c * t * v * m * 4
    if payload > MAX_PAYLOAD_BYTES:
        raise DimOverflow(f"header dims C={c} T={t} V={v} M={m} imply a {payload}-byte payload "
                          f"per sample (limit {MAX_PAYLOAD_BYTES})")
    if num_val > n:
        raise BadHeader(f"num_val {num_val} exceeds num_samples {n}")
    parts = None
    if flags & 1:
        (count,) = struct.unpack("<I", _read_exact(f, 4, "part map"))
        parts = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", _read_exact(f, 2, "part map"))
            name = _read_exact(f, ln, "part map").decode("utf-8")
            (nj,) = struct.unpack("<I", _read_exact(f, 4, "part map"))
            if nj > v:
                raise BadHeader(f"part {name!r} lists {nj} joints but V={v}")
            parts[name] = list(struct.unpack(f"<{nj}I", _read_exact(f, 4 * nj, "part map")))
    dt = _record_dtype(c, t, v, m)
    raw = f.read(dt.itemsize * n)
    if len(raw) < dt.itemsize * n:
        i = len(raw) // dt.itemsize
        raise TruncatedFile(f"file truncated in sample {i} of {n}", sample_index=i)
    rec = np.frombuffer(raw, dtype=dt, count=n)
    labels = rec["label"].astype(np.int64)
    if n and labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise BadLabel(f"sample {bad} has label {labels[bad]} >= num_classes {k}")
    data = rec["payload"].transpose(0, 2, 3, 4, 1).astype(DTYPE)
    return SkeletonDataset(data, labels, k, parts, num_val)


def loads(raw: bytes) -> SkeletonDataset:
    return _read(io.BytesIO(raw))


def read_dataset(path) -> SkeletonDataset:
    with open(path, "rb") as f:
        return _read(f)


def dataset_hash(ds: SkeletonDataset) -> str:
    return hashlib.sha256(dumps(ds)).hexdigest()


# -- synthetic generator ------------------------------------------------------

# Ten-joint stick figure: (x, y, z) rest positions.
SYNTH_JOINTS = ("pelvis", "chest", "head", "l_elbow", "l_hand", "r_elbow", "r_hand",
                "l_knee", "r_knee", "neck")
SYNTH_REST = np.array([
    [0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.95, 0.0], [-0.3, 0.55, 0.0], [-0.55, 0.45, 0.0],
    [0.3, 0.55, 0.0], [0.55, 0.45, 0.0], [-0.15, -0.45, 0.0], [0.15, -0.45, 0.0], [0.0, 0.75, 0.0],
])
SYNTH_EDGES = [(0, 1), (1, 9), (9, 2), (9, 3), (3, 4), (9, 5), (5, 6), (0, 7), (0, 8)]
SYNTH_PARTS = {
    "left_arm": [3, 4], "right_arm": [5, 6], "two_hands": [4, 6],
    "two_legs": [7, 8], "trunk": [0, 1, 2, 9],
}
# limb group of each joint (0 left arm, 1 right arm, 2 legs, 3 trunk) and how
# strongly it follows that group's oscillation
_GROUP = np.array([3, 3, 3, 0, 0, 1, 1, 2, 2, 3])
_REACH = np.array([0.2, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0, 1.0, 1.0, 0.7])
# per-class (amplitude, phase offset) of each limb group
_PATTERNS = [
    ((1.0, 1.0, 0.0, 0.2), (0.0, 0.0, 0.0, 0.0)),
    ((1.0, 1.0, 0.0, 0.2), (0.0, np.pi, 0.0, 0.0)),
    ((0.2, 0.2, 1.0, 0.5), (0.0, 0.0, 0.0, np.pi / 2)),
    ((0.6, 0.6, 0.6, 0.6), (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)),
]


@dataclass
class SynthConfig:
    num_classes: int = 4
    samples_per_class: int = 200
    T: int = 64
    V: int = 10
    M: int = 1
    noise: float = 0.02
    seed: int = 0
    amplitude: float = 0.25
    val_fraction: float = 0.2

    def validate(self):
        for name in ("num_classes", "samples_per_class", "T", "V", "M"):
            if getattr(self, name) < 1:
                raise BadConfig(f"{name} must be >= 1")
        if self.noise < 0:
            raise BadConfig("noise sigma must be >= 0")
        if class_frequency(self.num_classes - 1) >= self.T / 2:
            raise BadConfig(f"T={self.T} too short to separate {self.num_classes} class frequencies")
        if not 0 <= self.val_fraction < 1:
            raise BadConfig("val_fraction must lie in [0, 1)")


def class_frequency(k: int) -> int:
    """Oscillation frequency of class ``k`` in cycles per sequence."""
    return 2 + k


def _skeleton(v):
    if v == len(SYNTH_JOINTS):
        return SYNTH_REST, _GROUP, _REACH, SYNTH_EDGES, SYNTH_PARTS
    # generic figure: joints on a ring, limb groups by index
    ang = 2 * np.pi * np.arange(v) / v
    rest = np.stack([0.5 * np.cos(ang), 0.5 * np.sin(ang), np.zeros(v)], axis=1)
    group = np.arange(v) % 4
    return rest, group, np.ones(v), [(i, i + 1) for i in range(v - 1)], None


def synth_skeleton(v=10):
    """(rest pose, edges, part map) of the synthetic figure with ``v`` joints."""
    rest, _, _, edges, parts = _skeleton(v)
    return rest, edges, parts


def synth_generate(cfg: SynthConfig = SynthConfig()):
    """Generate a balanced dataset with a stratified train/val split.

    Returns a single :class:`SkeletonDataset` whose last ``num_val`` samples
    are the validation split (``train_split()`` / ``val_split()``).
    """
    cfg.validate()
    rest, group, reach, _, parts = _skeleton(cfg.V)
    rng = make_rng(cfg.seed)
    t = np.arange(cfg.T) / cfg.T
    per = cfg.samples_per_class
    n_val = int(round(per * cfg.val_fraction))
    train, val = [], []
    for k in range(cfg.num_classes):
        amps, phases = _PATTERNS[k % len(_PATTERNS)]
        amps = np.asarray(amps)[group] * reach * cfg.amplitude  # (V,)
        offs = np.asarray(phases)[group]
        f = class_frequency(k)
        for i in range(per):
            phi = rng.uniform(0, 2 * np.pi, size=cfg.M)
            arg = 2 * np.pi * f * t[:, None, None] + offs[None, :, None] + phi[None, None, :]
            seq = np.empty((3, cfg.T, cfg.V, cfg.M))
            seq[0] = rest[None, :, 0, None] + amps[None, :, None] * np.sin(arg)
            seq[1] = rest[None, :, 1, None] + 0.5 * amps[None, :, None] * np.cos(arg)
            seq[2] = rest[None, :, 2, None] + 0.3 * amps[None, :, None] * np.sin(2 * arg)
            if cfg.noise > 0:
                seq = seq + rng.normal(0.0, cfg.noise, size=seq.shape)
            (val if i >= per - n_val else train).append((seq, k))
    order_t = rng.permutation(len(train))
    order_v = rng.permutation(len(val))
    items = [train[i] for i in order_t] + [val[i] for i in order_v]
    data = np.stack([s for s, _ in items]).astype(DTYPE)
    labels = np.array([k for _, k in items], dtype=np.int64)
    return SkeletonDataset(data, labels, cfg.num_classes, parts, num_val=len(val))


def frequency_oracle_predict(ds: SkeletonDataset) -> np.ndarray:
    """Classify by the dominant temporal frequency of joint motion (no learning)."""
    x = ds.data.astype(np.float64)
    x = x - x.mean(axis=2, keepdims=True)
    power = (np.abs(np.fft.rfft(x, axis=2)) ** 2).sum(axis=(1, 3, 4))  # (N, F)
    power[:, 0] = 0.0
    peak = power.argmax(axis=1)
    freqs = np.array([class_frequency(k) for k in range(ds.num_classes)])
    return np.abs(peak[:, None] - freqs[None, :]).argmin(axis=1)
