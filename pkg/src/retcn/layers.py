"""Convolutional building blocks with hand-derived gradients.

All layers act on (N, C, T, V) activations (``conv1x1`` also on (N, C, T)).
Temporal kernels are (K_h x 1): they slide over frames only, with same-length
zero padding and stride 1. Joint mixing is done by :func:`graphconv_forward`
over a fixed, row-normalised adjacency.

Backward passes return the exact gradient of ``sum(out * d_out)`` with
respect to the input and every learnable array.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, Union

import numpy as np

from . import kernels
from .errors import BadAdjacency, BadConfig, DimMismatch
from .tensor import DTYPE, Uniform, rand_fill


class _Params:
    """Shared helpers; learnable arrays are the dataclass fields listed in
    ``_learnable`` (everything else, e.g. the adjacency, is fixed)."""

    _learnable: tuple = ("weight", "bias")

    def learnable(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self._learnable}

    def param_count(self) -> int:
        return int(sum(a.size for a in self.learnable().values()))

    def astype(self, dtype):
        kw = {f.name: (getattr(self, f.name).astype(dtype)
                       if isinstance(getattr(self, f.name), np.ndarray)
                       else getattr(self, f.name))
              for f in fields(self)}
        return type(self)(**kw)


@dataclass
class Conv1x1Params(_Params):
    weight: np.ndarray  # (C_out, C_in)
    bias: np.ndarray  # (C_out,)

    @property
    def c_in(self):
        return self.weight.shape[1]

    @property
    def c_out(self):
        return self.weight.shape[0]


@dataclass
class PointwiseParams(Conv1x1Params):
    pass


@dataclass
class DepthwiseParams(_Params):
    weight: np.ndarray  # (C, K_h, K_w) with K_w == 1
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        if self.weight.ndim != 3 or self.weight.shape[2] != 1:
            raise BadConfig(f"depthwise weight must be (C, K_h, 1), got {self.weight.shape}")
        if self.weight.shape[1] % 2 == 0:
            raise BadConfig(f"temporal kernel K_h must be odd, got {self.weight.shape[1]}")

    @property
    def channels(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[1]


@dataclass
class DSCParams(_Params):
    """Depthwise temporal convolution followed by a pointwise channel mix."""

    dw: DepthwiseParams
    pw: PointwiseParams
    _learnable = ()

    def learnable(self):
        out = {f"dw.{k}": v for k, v in self.dw.learnable().items()}
        out.update({f"pw.{k}": v for k, v in self.pw.learnable().items()})
        return out

    def astype(self, dtype):
        return DSCParams(self.dw.astype(dtype), self.pw.astype(dtype))

    @property
    def c_in(self):
        return self.dw.channels

    @property
    def c_out(self):
        return self.pw.c_out

    @property
    def kernel(self):
        return self.dw.kernel


@dataclass
class StandardConvParams(_Params):
    """Full temporal convolution, the non-separable baseline."""

    weight: np.ndarray  # (C_out, C_in, K_h, 1)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[3] != 1:
            raise BadConfig(f"standard conv weight must be (C_out, C_in, K_h, 1), got {self.weight.shape}")
        if self.weight.shape[2] % 2 == 0:
            raise BadConfig(f"temporal kernel K_h must be odd, got {self.weight.shape[2]}")

    @property
    def c_in(self):
        return self.weight.shape[1]

    @property
    def c_out(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[2]


@dataclass
class GraphConvParams(_Params):
    adjacency: np.ndarray  # (V, V), fixed
    weight: np.ndarray  # (C_out, C_in)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        check_adjacency(self.adjacency)

    @property
    def c_in(self):
        return self.weight.shape[1]

    @property
    def c_out(self):
        return self.weight.shape[0]


@dataclass
class BatchNormParams(_Params):
    """Per-channel (axis 1) normalisation. ``running_*`` are buffers, not
    learnable; they are updated only by :func:`batchnorm_forward` with
    ``update=True`` (the training loop)."""

    gamma: np.ndarray  # (C,)
    beta: np.ndarray  # (C,)
    running_mean: np.ndarray  # (C,)
    running_var: np.ndarray  # (C,)
    momentum: float = 0.1
    eps: float = 1e-5
    _learnable = ("gamma", "beta")

    @property
    def channels(self):
        return self.gamma.shape[0]

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


Layer = Union[Conv1x1Params, DepthwiseParams, DSCParams, StandardConvParams, GraphConvParams,
              BatchNormParams]


@dataclass
class GradBundle:
    d_input: np.ndarray
    d_params: Dict[str, np.ndarray] = field(default_factory=dict)


# -- construction --------------------------------------------------------------

def _uniform(rng, shape, fan_in):
    s = float(np.sqrt(1.0 / fan_in))
    return rand_fill(rng, shape, Uniform(-s, s))


def init_conv1x1(rng, c_in, c_out, cls=Conv1x1Params):
    return cls(_uniform(rng, (c_out, c_in), c_in), _uniform(rng, (c_out,), c_in))


def init_pointwise(rng, c_in, c_out):
    return init_conv1x1(rng, c_in, c_out, PointwiseParams)


def init_depthwise(rng, channels, kernel):
    return DepthwiseParams(_uniform(rng, (channels, kernel, 1), kernel),
                           _uniform(rng, (channels,), kernel))


def init_dsc(rng, c_in, c_out, kernel):
    return DSCParams(init_depthwise(rng, c_in, kernel), init_pointwise(rng, c_in, c_out))


def init_standard_conv(rng, c_in, c_out, kernel):
    fan_in = c_in * kernel
    return StandardConvParams(_uniform(rng, (c_out, c_in, kernel, 1), fan_in),
                              _uniform(rng, (c_out,), fan_in))


def init_graphconv(rng, adjacency, c_in, c_out):
    return GraphConvParams(np.asarray(adjacency, dtype=DTYPE),
                           _uniform(rng, (c_out, c_in), c_in), _uniform(rng, (c_out,), c_in))


def init_batchnorm(channels, dtype=DTYPE):
    return BatchNormParams(np.ones(channels, dtype), np.zeros(channels, dtype),
                           np.zeros(channels, dtype), np.ones(channels, dtype))


def check_adjacency(a):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise BadAdjacency(f"adjacency must be square (V, V), got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise BadAdjacency("adjacency entries must be finite and >= 0")
    dev = np.abs(a.sum(axis=1, dtype=np.float64) - 1.0).max()
    if dev > 1e-6:
        raise BadAdjacency(f"adjacency rows must sum to 1 (max deviation {dev:.3g})")
    return a


def normalized_adjacency(num_joints, edges, self_loops=True):
    """Row-normalised adjacency of an undirected skeleton graph."""
    a = np.eye(num_joints) if self_loops else np.zeros((num_joints, num_joints))
    for i, j in edges:
        if not (0 <= i < num_joints and 0 <= j < num_joints):
            raise BadAdjacency(f"edge ({i}, {j}) out of range for V={num_joints}")
        a[i, j] = a[j, i] = 1.0
    deg = a.sum(axis=1, keepdims=True)
    deg[deg == 0] = 1.0
    return (a / deg).astype(DTYPE)


def chain_edges(num_joints):
    return [(i, i + 1) for i in range(num_joints - 1)]


# -- forward ------------------------------------------------------------------

def _channels(x, expected, what):
    if x.ndim not in (3, 4):
        raise DimMismatch(f"{what} expects a rank 3 or 4 input, got shape {x.shape}")
    if x.shape[1] != expected:
        raise DimMismatch(f"{what} expects {expected} input channels, got {x.shape[1]}")


def conv1x1_forward(p: Conv1x1Params, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    _channels(x, p.c_in, "conv1x1")
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    out = np.matmul(p.weight, flat) + p.bias[None, :, None]
    return out.reshape((x.shape[0], p.c_out) + x.shape[2:])


def pointwise_forward(p: PointwiseParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimMismatch(f"pointwise expects (N, C, T, V), got {x.shape}")
    return conv1x1_forward(p, x)


def depthwise_forward(p: DepthwiseParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimMismatch(f"depthwise expects (N, C, T, V), got {x.shape}")
    _channels(x, p.channels, "depthwise")
    return kernels.depthwise_forward(x, p.weight[:, :, 0], p.bias)


def dsc_forward(dw: DepthwiseParams, pw: PointwiseParams, x: np.ndarray) -> np.ndarray:
    if pw.c_in != dw.channels:
        raise DimMismatch(f"pointwise C_in {pw.c_in} != depthwise channels {dw.channels}")
    return pointwise_forward(pw, depthwise_forward(dw, x))


def _pad_t(x, pad):
    n, c, t, v = x.shape
    xp = np.zeros((n, c, t + 2 * pad, v), dtype=x.dtype)
    xp[:, :, pad:pad + t] = x
    return xp


def standard_conv_forward(p: StandardConvParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimMismatch(f"temporal conv expects (N, C, T, V), got {x.shape}")
    _channels(x, p.c_in, "temporal conv")
    n, _, t, v = x.shape
    k = p.kernel
    xp = _pad_t(x, (k - 1) // 2)
    out = np.empty((n, p.c_out, t * v), dtype=np.result_type(x, p.weight))
    out[...] = p.bias[None, :, None]
    for j in range(k):
        out += np.matmul(p.weight[:, :, j, 0], xp[:, :, j:j + t].reshape(n, p.c_in, t * v))
    return out.reshape(n, p.c_out, t, v)


def graphconv_forward(p: GraphConvParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimMismatch(f"graphconv expects (N, C, T, V), got {x.shape}")
    if x.shape[3] != p.adjacency.shape[0]:
        raise DimMismatch(f"graphconv adjacency is for V={p.adjacency.shape[0]}, input has V={x.shape[3]}")
    check_adjacency(p.adjacency)
    agg = np.matmul(x, p.adjacency.T.astype(x.dtype, copy=False))
    return conv1x1_forward(p, agg)


def _bn_shape(x):
    return (1, x.shape[1]) + (1,) * (x.ndim - 2)


def _per_channel(x):
    """(N, C, ...) -> contiguous (C, N*...) so reductions run along rows."""
    return np.ascontiguousarray(np.moveaxis(x, 1, 0)).reshape(x.shape[1], -1)


def _batch_stats(x):
    rows = _per_channel(x)
    mean = rows.mean(axis=1)
    var = np.square(rows - mean[:, None]).mean(axis=1)
    return mean, var


def batchnorm_forward(p: BatchNormParams, x: np.ndarray, training=False, update=False) -> np.ndarray:
    """Normalise with batch statistics (``training``) or the running ones.

    With ``update`` the running statistics are blended with the batch ones
    in place (unbiased variance, as is conventional)."""
    x = np.asarray(x)
    _channels(x, p.channels, "batchnorm")
    shape = _bn_shape(x)
    if training:
        mean, var = _batch_stats(x)
        if update:
            count = x.size // x.shape[1]
            unbiased = var * (count / max(count - 1, 1))
            p.running_mean[...] = (1 - p.momentum) * p.running_mean + p.momentum * mean
            p.running_var[...] = (1 - p.momentum) * p.running_var + p.momentum * unbiased
    else:
        mean, var = p.running_mean, p.running_var
    inv = (1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + p.eps)).astype(x.dtype)
    scale = (p.gamma * inv).astype(x.dtype)
    shift = (p.beta - np.asarray(mean, dtype=x.dtype) * scale).astype(x.dtype)
    return x * scale.reshape(shape) + shift.reshape(shape)


def batchnorm_backward(p: BatchNormParams, x: np.ndarray, d_out: np.ndarray, training=False) -> GradBundle:
    shape = _bn_shape(x)
    if training:
        mean, var = _batch_stats(x)
    else:
        mean, var = p.running_mean, p.running_var
    inv = (1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + p.eps)).astype(x.dtype)
    xhat = (x - np.asarray(mean, dtype=x.dtype).reshape(shape)) * inv.reshape(shape)
    d_beta = _per_channel(d_out).sum(axis=1)
    d_gamma = _per_channel(d_out * xhat).sum(axis=1)
    if training:
        count = x.size // x.shape[1]
        a = (p.gamma * inv).reshape(shape)
        d_x = a * (d_out - (d_beta / count).reshape(shape) - xhat * (d_gamma / count).reshape(shape))
    else:
        d_x = d_out * (p.gamma * inv).reshape(shape)
    return GradBundle(d_x, {"gamma": d_gamma, "beta": d_beta})


def layer_forward(layer: Layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, DSCParams):
        return dsc_forward(layer.dw, layer.pw, x)
    if isinstance(layer, PointwiseParams):
        return pointwise_forward(layer, x)
    if isinstance(layer, Conv1x1Params):
        return conv1x1_forward(layer, x)
    if isinstance(layer, DepthwiseParams):
        return depthwise_forward(layer, x)
    if isinstance(layer, StandardConvParams):
        return standard_conv_forward(layer, x)
    if isinstance(layer, GraphConvParams):
        return graphconv_forward(layer, x)
    if isinstance(layer, BatchNormParams):
        return batchnorm_forward(layer, x)
    raise TypeError(f"not a layer: {type(layer).__name__}")


# -- backward -----------------------------------------------------------------

def _conv1x1_backward(p, x, d_out):
    n, ci = x.shape[:2]
    xf = x.reshape(n, ci, -1)
    gf = d_out.reshape(n, p.c_out, -1)
    d_w = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0)
    d_b = gf.sum(axis=(0, 2))
    d_x = np.matmul(p.weight.T, gf).reshape(x.shape)
    return GradBundle(d_x, {"weight": d_w, "bias": d_b})


def _depthwise_backward(p, x, d_out):
    d_x, d_w, d_b = kernels.depthwise_backward(x, p.weight[:, :, 0], d_out)
    return GradBundle(d_x, {"weight": d_w[:, :, None], "bias": d_b})


def _standard_conv_backward(p, x, d_out):
    n, _, t, v = x.shape
    k = p.kernel
    pad = (k - 1) // 2
    xp = _pad_t(x, pad)
    gf = d_out.reshape(n, p.c_out, t * v)
    d_xp = np.zeros_like(xp, dtype=np.result_type(x, p.weight))
    d_w = np.empty_like(p.weight)
    for j in range(k):
        win = xp[:, :, j:j + t].reshape(n, p.c_in, t * v)
        d_w[:, :, j, 0] = np.einsum("nol,nil->oi", gf, win)
        d_xp[:, :, j:j + t] += np.matmul(p.weight[:, :, j, 0].T, gf).reshape(n, p.c_in, t, v)
    return GradBundle(d_xp[:, :, pad:pad + t].copy(), {"weight": d_w, "bias": gf.sum(axis=(0, 2))})


def _graphconv_backward(p, x, d_out):
    adj = p.adjacency.astype(x.dtype, copy=False)
    agg = np.matmul(x, adj.T)
    g = _conv1x1_backward(p, agg, d_out)
    g.d_input = np.matmul(g.d_input, adj)
    return g


def _dsc_backward(p, x, d_out):
    mid = depthwise_forward(p.dw, x)
    g_pw = _conv1x1_backward(p.pw, mid, d_out)
    g_dw = _depthwise_backward(p.dw, x, g_pw.d_input)
    d_params = {f"dw.{k}": v for k, v in g_dw.d_params.items()}
    d_params.update({f"pw.{k}": v for k, v in g_pw.d_params.items()})
    return GradBundle(g_dw.d_input, d_params)


def layer_backward(layer: Layer, x: np.ndarray, d_out: np.ndarray) -> GradBundle:
    """Gradients of ``sum(layer_forward(layer, x) * d_out)``."""
    x = np.asarray(x)
    d_out = np.asarray(d_out)
    expected = layer_output_shape(layer, x.shape)
    if d_out.shape != expected:
        raise DimMismatch(f"d_out shape {d_out.shape} != forward output shape {expected}")
    if isinstance(layer, DSCParams):
        return _dsc_backward(layer, x, d_out)
    if isinstance(layer, Conv1x1Params):
        return _conv1x1_backward(layer, x, d_out)
    if isinstance(layer, DepthwiseParams):
        return _depthwise_backward(layer, x, d_out)
    if isinstance(layer, StandardConvParams):
        return _standard_conv_backward(layer, x, d_out)
    if isinstance(layer, GraphConvParams):
        return _graphconv_backward(layer, x, d_out)
    if isinstance(layer, BatchNormParams):
        return batchnorm_backward(layer, x, d_out)
    raise TypeError(f"not a layer: {type(layer).__name__}")


def layer_output_shape(layer: Layer, in_shape) -> tuple:
    in_shape = tuple(in_shape)
    if isinstance(layer, DepthwiseParams):
        if len(in_shape) != 4 or in_shape[1] != layer.channels:
            raise DimMismatch(f"depthwise expects C={layer.channels}, got shape {in_shape}")
        return in_shape
    if isinstance(layer, BatchNormParams):
        if len(in_shape) < 2 or in_shape[1] != layer.channels:
            raise DimMismatch(f"batchnorm expects C={layer.channels}, got shape {in_shape}")
        return in_shape
    if isinstance(layer, GraphConvParams) and (len(in_shape) != 4 or in_shape[3] != layer.adjacency.shape[0]):
        raise DimMismatch(f"graphconv expects V={layer.adjacency.shape[0]}, got shape {in_shape}")
    if len(in_shape) not in (3, 4) or in_shape[1] != layer.c_in:
        raise DimMismatch(f"layer expects C_in={layer.c_in}, got shape {in_shape}")
    return (in_shape[0], layer.c_out) + in_shape[2:]
