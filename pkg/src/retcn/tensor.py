"""Dense array substrate.

Activations are plain ``numpy`` arrays in (N, C, T, V) order ("Tensor4") or
(N, C, T) order ("Tensor3"), row-major with the joint axis fastest. Storage
is float32 by default; reductions accumulate in float64. Functions here are
pure and never modify their arguments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import BadDistParams, DimMismatch

DTYPE = np.float32


def _check_rank(x, rank, name):
    x = np.asarray(x)
    if x.ndim != rank:
        raise DimMismatch(f"{name} must be rank {rank}, got shape {x.shape}")
    if min(x.shape) < 1:
        raise DimMismatch(f"{name} has an empty dimension: {x.shape}")
    return x


def as_tensor4(x, name="x"):
    """Validate a (N, C, T, V) array and return it as an ndarray (no copy)."""
    return _check_rank(x, 4, name)


def as_tensor3(x, name="x"):
    """Validate a (N, C, T) array and return it as an ndarray (no copy)."""
    return _check_rank(x, 3, name)


# -- random numbers -----------------------------------------------------------

def make_rng(seed=None, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and an optional stream path.

    Distinct ``stream`` tuples give statistically independent generators, so
    per-sample or per-level streams can be split deterministically from one
    run seed. ``seed=None`` draws from OS entropy.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class Gaussian:
    mu: float = 0.0
    sigma: float = 1.0


Dist = Union[Uniform, Gaussian]


def rand_fill(rng: np.random.Generator, dims: Sequence[int], dist: Dist,
              dtype=DTYPE) -> np.ndarray:
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise DimMismatch(f"dims must all be >= 1, got {dims}")
    if isinstance(dist, Uniform):
        if not (np.isfinite(dist.lo) and np.isfinite(dist.hi)) or dist.lo >= dist.hi:
            raise BadDistParams(f"uniform needs lo < hi, got ({dist.lo}, {dist.hi})")
        out = rng.uniform(dist.lo, dist.hi, size=dims)
    elif isinstance(dist, Gaussian):
        if not (np.isfinite(dist.mu) and np.isfinite(dist.sigma)) or dist.sigma < 0:
            raise BadDistParams(f"gaussian needs sigma >= 0, got {dist.sigma}")
        out = rng.normal(dist.mu, dist.sigma, size=dims)
    else:
        raise BadDistParams(f"unknown distribution {dist!r}")
    return out.astype(dtype)


# -- reductions and broadcasts ------------------------------------------------

def mean_over_joints(x: np.ndarray) -> np.ndarray:
    """(N, C, T, V) -> (N, C, T) mean over the joint axis."""
    x = as_tensor4(x)
    return x.mean(axis=3, dtype=np.float64).astype(x.dtype, copy=False)


def softmax_axis_t(x: np.ndarray) -> np.ndarray:
    """Softmax along the frame axis of a (N, C, T) array, max-shifted."""
    x = as_tensor3(x)
    z = x.astype(np.float64) - x.max(axis=2, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=2, keepdims=True)
    return out.astype(x.dtype, copy=False)


def broadcast_mul_t(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """out[n,c,t,v] = x[n,c,t,v] * a[n,c,t]."""
    x = as_tensor4(x)
    a = as_tensor3(a, "a")
    if a.shape != x.shape[:3]:
        raise DimMismatch(f"weights {a.shape} do not match input (N,C,T)={x.shape[:3]}")
    return x * a[..., None]
