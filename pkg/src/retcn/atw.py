"""Adaptive temporal weighting.

Joints are pooled away, the (N, C, T) map goes through a chain of 1x1
convolutions (by default C -> C/n -> C, no nonlinearity in between), and a
softmax over frames turns the result into per-(sample, channel) frame
weights that rescale the input.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Tuple

import numpy as np

from .errors import BadConfig, DimMismatch, ZeroDim
from .layers import Conv1x1Params, GradBundle, conv1x1_forward, init_conv1x1, layer_backward
from .tensor import as_tensor3, as_tensor4, broadcast_mul_t, softmax_axis_t

POOLINGS = ("mean", "max", "adaptive", "global_max", "global_mean")


@dataclass
class AtwParams:
    convs: Tuple[Conv1x1Params, ...]
    reduction_ratio: int = 8
    pooling: str = "mean"

    def __post_init__(self):
        self.convs = tuple(self.convs)
        if not self.convs:
            raise BadConfig("ATW needs at least one 1x1 convolution")
        if self.pooling not in POOLINGS:
            raise BadConfig(f"unknown pooling {self.pooling!r}; choose from {POOLINGS}")
        for a, b in zip(self.convs, self.convs[1:]):
            if a.c_out != b.c_in:
                raise BadConfig(f"ATW conv chain breaks: {a.c_out} -> {b.c_in}")
        if self.convs[-1].c_out != self.convs[0].c_in:
            raise BadConfig("ATW must restore the input channel count")

    @property
    def reduce(self) -> Conv1x1Params:
        return self.convs[0]

    @property
    def restore(self) -> Conv1x1Params:
        return self.convs[-1]

    @property
    def channels(self) -> int:
        return self.convs[0].c_in

    def learnable(self):
        return {f"convs.{i}.{k}": v for i, c in enumerate(self.convs)
                for k, v in c.learnable().items()}

    def param_count(self) -> int:
        return sum(c.param_count() for c in self.convs)

    def astype(self, dtype):
        return AtwParams(tuple(c.astype(dtype) for c in self.convs),
                         self.reduction_ratio, self.pooling)


@dataclass
class AttentionWeights:
    alpha: np.ndarray  # (N, C, T), rows sum to 1 over T

    def most_attended(self) -> np.ndarray:
        """Index of the heaviest frame per (sample, channel); ties -> smallest t."""
        return np.argmax(self.alpha, axis=2)


def mid_channels(channels: int, reduction_ratio: int) -> int:
    if reduction_ratio < 1:
        raise BadConfig(f"reduction ratio must be >= 1, got {reduction_ratio}")
    return max(1, channels // reduction_ratio)


def build_atw(rng, channels, reduction_ratio=8, pooling="mean", num_layers=2, reduce=True):
    """ATW with ``num_layers`` 1x1 convs; with ``reduce`` the first conv
    shrinks to C/n, intermediate convs stay at C/n and the last restores C."""
    if num_layers < 1:
        raise BadConfig("num_layers must be >= 1")
    if reduce and num_layers < 2:
        raise BadConfig("a reducing ATW needs at least two conv layers")
    c_mid = mid_channels(channels, reduction_ratio) if reduce else channels
    widths = [channels] + [c_mid] * (num_layers - 1) + [channels]
    convs = [init_conv1x1(rng, a, b) for a, b in zip(widths, widths[1:])]
    return AtwParams(tuple(convs), reduction_ratio, pooling)


# -- pooling over joints ------------------------------------------------------

def pool_joints(x: np.ndarray, pooling: str = "mean") -> np.ndarray:
    """Collapse the joint axis: (N, C, T, V) -> (N, C, T).

    ``adaptive`` is adaptive average pooling of V to a single bin, which is
    the joint mean. The ``global_*`` variants pool over frames and joints
    together and broadcast the result back along T.
    """
    if pooling in ("mean", "adaptive"):
        return x.mean(axis=3, dtype=np.float64).astype(x.dtype, copy=False)
    if pooling == "max":
        return x.max(axis=3)
    t = x.shape[2]
    if pooling == "global_mean":
        g = x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype, copy=False)
    elif pooling == "global_max":
        g = x.max(axis=(2, 3))
    else:
        raise BadConfig(f"unknown pooling {pooling!r}")
    return np.repeat(g[:, :, None], t, axis=2)


def pool_joints_backward(x, pooling, d_pooled):
    n, c, t, v = x.shape
    if pooling in ("mean", "adaptive"):
        return np.broadcast_to(d_pooled[..., None] / v, x.shape).copy()
    if pooling == "max":
        idx = np.argmax(x, axis=3)
        d_x = np.zeros_like(x, dtype=d_pooled.dtype)
        np.put_along_axis(d_x, idx[..., None], d_pooled[..., None], axis=3)
        return d_x
    d_g = d_pooled.sum(axis=2)
    if pooling == "global_mean":
        return np.broadcast_to(d_g[:, :, None, None] / (t * v), x.shape).copy()
    if pooling == "global_max":
        flat = x.reshape(n, c, t * v)
        idx = np.argmax(flat, axis=2)
        d_x = np.zeros(flat.shape, dtype=d_pooled.dtype)
        np.put_along_axis(d_x, idx[..., None], d_g[..., None], axis=2)
        return d_x.reshape(x.shape)
    raise BadConfig(f"unknown pooling {pooling!r}")


# -- mechanism ----------------------------------------------------------------

def _logits(p, x):
    h = pool_joints(x, p.pooling)
    acts = [h]
    for conv in p.convs:
        h = conv1x1_forward(conv, h)
        acts.append(h)
    return acts


def atw_weights(p: AtwParams, x: np.ndarray) -> AttentionWeights:
    x = as_tensor4(x)
    if x.shape[1] != p.channels:
        raise DimMismatch(f"ATW built for C={p.channels}, input has C={x.shape[1]}")
    return AttentionWeights(softmax_axis_t(_logits(p, x)[-1]))


def atw_apply(x: np.ndarray, a: AttentionWeights) -> np.ndarray:
    alpha = a.alpha if isinstance(a, AttentionWeights) else as_tensor3(a, "alpha")
    return broadcast_mul_t(x, alpha)


def atw_forward(p: AtwParams, x: np.ndarray):
    """Returns ``(x * alpha, AttentionWeights)``."""
    a = atw_weights(p, x)
    return atw_apply(x, a), a


def atw_backward(p: AtwParams, x: np.ndarray, d_out: np.ndarray) -> GradBundle:
    """Gradients of ``sum(atw_forward(p, x)[0] * d_out)``."""
    x = as_tensor4(x)
    if d_out.shape != x.shape:
        raise DimMismatch(f"d_out shape {d_out.shape} != input shape {x.shape}")
    acts = _logits(p, x)
    alpha = softmax_axis_t(acts[-1])
    d_alpha = np.einsum("nctv,nctv->nct", d_out, x)
    d_h = alpha * (d_alpha - (alpha * d_alpha).sum(axis=2, keepdims=True))
    d_params = {}
    for i in range(len(p.convs) - 1, -1, -1):
        g = layer_backward(p.convs[i], acts[i], d_h)
        d_params[f"convs.{i}.weight"] = g.d_params["weight"]
        d_params[f"convs.{i}.bias"] = g.d_params["bias"]
        d_h = g.d_input
    d_x = d_out * alpha[..., None] + pool_joints_backward(x, p.pooling, d_h)
    return GradBundle(d_x, d_params)


def atw_cost_ratio(c_in: int, c_mid: int, c_out: int) -> Fraction:
    """Two-step (C_in -> C_mid -> C_out) over single-step (C_in -> C_out) cost,
    as an exact fraction."""
    if min(c_in, c_mid, c_out) < 1:
        raise ZeroDim(f"channel counts must be >= 1, got ({c_in}, {c_mid}, {c_out})")
    return Fraction(c_mid * c_in + c_out * c_mid, c_out * c_in)
