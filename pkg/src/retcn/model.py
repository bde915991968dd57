"""Skeleton action recognition network.

Each block is ``relu(bn_t(tconv(relu(bn_g(gcn(h))))) + residual(h))`` where
``gcn`` is the fixed-adjacency spatial aggregation, ``tconv`` a depthwise
separable temporal convolution (or a standard one with ``use_dsc=False``) and
``residual`` the identity or a 1x1 projection when the width changes. The
input passes through a batch norm over the (channel, joint) features first.
With ``norm=False`` every batch norm is dropped. ATW modules sit after the
configured blocks; their output is multiplied by T when ``atw_rescale`` is
set, so uniform attention leaves the activations unchanged; global average pooling and a linear classifier follow.
Persons (M) are folded into the batch and their logits averaged.

Batch norms use batch statistics only in ``training`` mode; the default
(inference) mode uses running statistics, so samples never interact.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .atw import POOLINGS, AtwParams, atw_backward, atw_forward, build_atw
from .data import SYNTH_EDGES, SkeletonSequence
from .errors import BadConfig, DimMismatch
from .layers import (BatchNormParams, Conv1x1Params, GraphConvParams, batchnorm_backward,
                     batchnorm_forward, chain_edges, conv1x1_forward, graphconv_forward,
                     init_batchnorm, init_conv1x1, init_dsc, init_graphconv, init_standard_conv,
                     layer_backward, layer_forward, normalized_adjacency)
from .tensor import make_rng

PLACEMENTS = ("early", "middle", "late")


@dataclass
class ModelConfig:
    num_classes: int = 4
    V: int = 10
    T: int = 64
    in_channels: int = 3
    channel_plan: Tuple[int, ...] = (16, 32, 64)
    temporal_kernel: int = 5
    atw_placement: Tuple[str, ...] = ("late",)
    reduction_ratio: int = 8
    pooling: str = "mean"
    atw_layers: int = 2
    atw_reduce: bool = True
    use_dsc: bool = True
    branches: int = 1
    norm: bool = True
    atw_rescale: bool = True
    edges: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        self.channel_plan = tuple(int(c) for c in self.channel_plan)
        self.atw_placement = tuple(self.atw_placement)
        if self.edges is not None:
            self.edges = tuple(tuple(int(i) for i in e) for e in self.edges)

    def validate(self):
        if not self.channel_plan or min(self.channel_plan) < 1:
            raise BadConfig("channel_plan must be a nonempty list of positive widths")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise BadConfig(f"temporal_kernel must be odd, got {self.temporal_kernel}")
        bad = [p for p in self.atw_placement if p not in PLACEMENTS]
        if bad:
            raise BadConfig(f"unknown ATW placement(s) {bad}; choose from {PLACEMENTS}")
        if self.pooling not in POOLINGS:
            raise BadConfig(f"unknown pooling {self.pooling!r}; choose from {POOLINGS}")
        for name in ("num_classes", "V", "T", "in_channels", "reduction_ratio", "branches", "atw_layers"):
            if getattr(self, name) < 1:
                raise BadConfig(f"{name} must be >= 1")
        if self.atw_reduce and self.atw_placement and self.atw_layers < 2:
            raise BadConfig("a reducing ATW needs atw_layers >= 2")

    def resolved_edges(self):
        if self.edges is not None:
            return [tuple(e) for e in self.edges]
        return list(SYNTH_EDGES) if self.V == 10 else chain_edges(self.V)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_plan"] = list(self.channel_plan)
        d["atw_placement"] = list(self.atw_placement)
        d["edges"] = None if self.edges is None else [list(e) for e in self.edges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("edges") is not None:
            d["edges"] = tuple(tuple(e) for e in d["edges"])
        return cls(**d)


@dataclass
class Block:
    gcn: GraphConvParams
    tconvs: List  # DSCParams or StandardConvParams, one per branch
    residual: Optional[Conv1x1Params] = None
    gcn_bn: Optional[BatchNormParams] = None
    tconv_bn: Optional[BatchNormParams] = None


@dataclass
class AtwSite:
    placement: str
    block: int
    params: AtwParams


def placement_block(placement: str, num_blocks: int) -> int:
    return {"early": 0, "middle": (num_blocks - 1) // 2, "late": num_blocks - 1}[placement]


@dataclass
class Model:
    config: ModelConfig
    blocks: List[Block]
    atws: List[AtwSite]
    classifier: Conv1x1Params
    data_bn: Optional[BatchNormParams] = None

    def named_layers(self):
        """``(name, layer, (T, V))`` in forward order. The input batch norm
        works on (C*V, T) features and is reported with extent ``(T, 1)``."""
        t, v = self.config.T, self.config.V
        if self.data_bn is not None:
            yield "data_bn", self.data_bn, (t, 1)
        for b, block in enumerate(self.blocks):
            yield f"block{b}.gcn", block.gcn, (t, v)
            if block.gcn_bn is not None:
                yield f"block{b}.gcn_bn", block.gcn_bn, (t, v)
            for j, tc in enumerate(block.tconvs):
                yield f"block{b}.tconv{j}", tc, (t, v)
            if block.tconv_bn is not None:
                yield f"block{b}.tconv_bn", block.tconv_bn, (t, v)
            if block.residual is not None:
                yield f"block{b}.residual", block.residual, (t, v)
            for site in self.atws:
                if site.block == b:
                    yield f"atw.{site.placement}", site.params, (t, v)
        yield "classifier", self.classifier, (1, 1)

    def learnable(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, layer, _ in self.named_layers():
            for k, arr in layer.learnable().items():
                out[f"{name}.{k}"] = arr
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        """Running batch-norm statistics (state, but not learnable)."""
        out = {}
        for name, layer, _ in self.named_layers():
            if isinstance(layer, BatchNormParams):
                for k, arr in layer.buffers().items():
                    out[f"{name}.{k}"] = arr
        return out

    def param_count(self) -> int:
        return int(sum(a.size for a in self.learnable().values()))

    def astype(self, dtype) -> "Model":
        def cast(layer):
            return None if layer is None else layer.astype(dtype)

        blocks = [Block(b.gcn.astype(dtype), [tc.astype(dtype) for tc in b.tconvs],
                        cast(b.residual), cast(b.gcn_bn), cast(b.tconv_bn))
                  for b in self.blocks]
        atws = [AtwSite(s.placement, s.block, s.params.astype(dtype)) for s in self.atws]
        return Model(self.config, blocks, atws, self.classifier.astype(dtype), cast(self.data_bn))

    def copy(self) -> "Model":
        return self.astype(self.classifier.weight.dtype)

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        own = {**self.learnable(), **self.buffers()}
        missing = set(own) - set(arrays)
        if missing:
            raise BadConfig(f"checkpoint lacks arrays: {sorted(missing)}")
        for name, arr in own.items():
            src = np.asarray(arrays[name])
            if src.shape != arr.shape:
                raise BadConfig(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src


def build(cfg: ModelConfig = None, rng=None) -> Model:
    """Initialise a model; ``rng`` may be a Generator or an int seed."""
    cfg = cfg or ModelConfig()
    cfg.validate()
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = make_rng(0 if rng is None else int(rng))
    adjacency = normalized_adjacency(cfg.V, cfg.resolved_edges())
    blocks = []
    c_prev = cfg.in_channels
    for c in cfg.channel_plan:
        gcn = init_graphconv(rng, adjacency, c_prev, c)
        tconvs = []
        for j in range(cfg.branches):
            k = cfg.temporal_kernel + 2 * j
            tconvs.append(init_dsc(rng, c, c, k) if cfg.use_dsc else init_standard_conv(rng, c, c, k))
        residual = init_conv1x1(rng, c_prev, c) if c_prev != c else None
        bns = (init_batchnorm(c), init_batchnorm(c)) if cfg.norm else (None, None)
        blocks.append(Block(gcn, tconvs, residual, *bns))
        c_prev = c
    atws = []
    for placement in PLACEMENTS:
        if placement in cfg.atw_placement:
            b = placement_block(placement, len(blocks))
            atws.append(AtwSite(placement, b, build_atw(
                rng, cfg.channel_plan[b], cfg.reduction_ratio, cfg.pooling,
                cfg.atw_layers, cfg.atw_reduce)))
    classifier = init_conv1x1(rng, c_prev, cfg.num_classes)
    data_bn = init_batchnorm(cfg.in_channels * cfg.V) if cfg.norm else None
    return Model(cfg, blocks, atws, classifier, data_bn)


# -- forward / backward -------------------------------------------------------

def _check_input(m: Model, x):
    cfg = m.config
    if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.T, cfg.V):
        raise DimMismatch(f"model expects (N, {cfg.in_channels}, {cfg.T}, {cfg.V}), got {x.shape}")


def _to_features(x):
    n, c, t, v = x.shape
    return x.transpose(0, 1, 3, 2).reshape(n, c * v, t)


def _from_features(f, shape):
    n, c, t, v = shape
    return f.reshape(n, c, v, t).transpose(0, 1, 3, 2)


def forward_cached(m: Model, x: np.ndarray, training: bool = False, update_stats: bool = False):
    """Logits plus everything :func:`backward` needs.

    ``training`` switches batch norms to batch statistics; ``update_stats``
    additionally folds those into the running statistics (in place)."""
    x = np.asarray(x)
    _check_input(m, x)
    cache = {"blocks": [], "atw_inputs": [], "alphas": [], "training": training}

    def bn(p, z):
        return batchnorm_forward(p, z, training=training, update=update_stats)

    h = x
    if m.data_bn is not None:
        h = _from_features(bn(m.data_bn, _to_features(x)), x.shape)
    cache["input"] = x
    for b, block in enumerate(m.blocks):
        g_raw = graphconv_forward(block.gcn, h)
        g_pre = g_raw if block.gcn_bn is None else bn(block.gcn_bn, g_raw)
        g = np.maximum(g_pre, 0) if block.gcn_bn is not None else g_raw
        s_raw = layer_forward(block.tconvs[0], g)
        for tc in block.tconvs[1:]:
            s_raw = s_raw + layer_forward(tc, g)
        s = s_raw if block.tconv_bn is None else bn(block.tconv_bn, s_raw)
        r = h if block.residual is None else conv1x1_forward(block.residual, h)
        pre = s + r
        cache["blocks"].append((h, g_raw, g_pre, g, s_raw, pre))
        h = np.maximum(pre, 0)
        for i, site in enumerate(m.atws):
            if site.block == b:
                cache["atw_inputs"].append((i, h))
                h, a = atw_forward(site.params, h)
                if m.config.atw_rescale:
                    h = h * h.dtype.type(h.shape[2])
                cache["alphas"].append(a)
    pooled = h.mean(axis=(2, 3))
    cache["final_shape"] = h.shape
    cache["pooled"] = pooled
    logits = pooled @ m.classifier.weight.T + m.classifier.bias
    return logits, cache


def forward(m: Model, x: np.ndarray, training: bool = False) -> np.ndarray:
    """(N, C, T, V) -> (N, num_classes) logits (inference mode by default)."""
    return forward_cached(m, x, training=training)[0]


def attention_weights(m: Model, x: np.ndarray):
    """The AttentionWeights produced at every ATW site, in forward order."""
    return forward_cached(m, x)[1]["alphas"]


def backward(m: Model, cache, d_logits: np.ndarray):
    """Gradients of ``sum(logits * d_logits)`` keyed like ``m.learnable()``,
    plus the input gradient."""
    grads = {}
    pooled = cache["pooled"]
    grads["classifier.weight"] = d_logits.T @ pooled
    grads["classifier.bias"] = d_logits.sum(axis=0)
    n, c, t, v = cache["final_shape"]
    d_h = np.broadcast_to((d_logits @ m.classifier.weight)[:, :, None, None] / (t * v), (n, c, t, v))
    atw_inputs = dict(cache["atw_inputs"])
    for b in range(len(m.blocks) - 1, -1, -1):
        block = m.blocks[b]
        for i in range(len(m.atws) - 1, -1, -1):
            site = m.atws[i]
            if site.block != b:
                continue
            if m.config.atw_rescale:
                d_h = d_h * d_h.dtype.type(d_h.shape[2])
            g = atw_backward(site.params, atw_inputs[i], d_h)
            for k, arr in g.d_params.items():
                grads[f"atw.{site.placement}.{k}"] = arr
            d_h = g.d_input
        h_in, g_raw, g_pre, g_in, s_raw, pre = cache["blocks"][b]
        training = cache["training"]
        d_pre = d_h * (pre > 0)
        if block.residual is None:
            d_in = d_pre.copy()
        else:
            gr = layer_backward(block.residual, h_in, d_pre)
            grads[f"block{b}.residual.weight"] = gr.d_params["weight"]
            grads[f"block{b}.residual.bias"] = gr.d_params["bias"]
            d_in = gr.d_input
        d_s = d_pre
        if block.tconv_bn is not None:
            gb = batchnorm_backward(block.tconv_bn, s_raw, d_pre, training=training)
            grads.update({f"block{b}.tconv_bn.{k}": a for k, a in gb.d_params.items()})
            d_s = gb.d_input
        d_g = None
        for j, tc in enumerate(block.tconvs):
            gt = layer_backward(tc, g_in, d_s)
            for k, arr in gt.d_params.items():
                grads[f"block{b}.tconv{j}.{k}"] = arr
            d_g = gt.d_input if d_g is None else d_g + gt.d_input
        if block.gcn_bn is not None:
            d_g = d_g * (g_pre > 0)
            gb = batchnorm_backward(block.gcn_bn, g_raw, d_g, training=training)
            grads.update({f"block{b}.gcn_bn.{k}": a for k, a in gb.d_params.items()})
            d_g = gb.d_input
        gg = layer_backward(block.gcn, h_in, d_g)
        grads[f"block{b}.gcn.weight"] = gg.d_params["weight"]
        grads[f"block{b}.gcn.bias"] = gg.d_params["bias"]
        d_h = d_in + gg.d_input
    if m.data_bn is not None:
        x = cache["input"]
        gb = batchnorm_backward(m.data_bn, _to_features(x), _to_features(d_h),
                                training=cache["training"])
        grads.update({f"data_bn.{k}": a for k, a in gb.d_params.items()})
        d_h = _from_features(gb.d_input, x.shape)
    return grads, d_h


def fold_persons(data: np.ndarray) -> np.ndarray:
    """(N, C, T, V, M) -> (N*M, C, T, V), sample-major."""
    n, c, t, v, mm = data.shape
    return data.transpose(0, 4, 1, 2, 3).reshape(n * mm, c, t, v)


def forward_sequences(m: Model, data: np.ndarray) -> np.ndarray:
    """Logits for raw (N, C, T, V, M) samples, averaged over persons."""
    data = np.asarray(data)
    if data.ndim != 5:
        raise DimMismatch(f"expected (N, C, T, V, M) samples, got {data.shape}")
    n, mm = data.shape[0], data.shape[4]
    logits = forward(m, fold_persons(data).astype(m.classifier.weight.dtype, copy=False))
    return logits.reshape(n, mm, -1).mean(axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_logits(logits: Sequence[float]):
    """(class, confidence) for one logit vector; ties go to the smallest index."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    k = int(np.argmax(p))
    return k, float(p[k])


def predict(m: Model, d: SkeletonSequence):
    if d.data.ndim != 4:
        raise DimMismatch(f"expected a (C, T, V, M) sequence, got {d.data.shape}")
    return predict_logits(forward_sequences(m, d.data[None])[0])


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, m: Model, epoch=None, metric=None, extra: Optional[dict] = None):
    """Write config, every learnable array, epoch and metric to an ``.npz`` container."""
    meta = {"config": m.config.to_dict(), "epoch": epoch, "metric": metric,
            "dtype": str(m.classifier.weight.dtype), "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in {**m.learnable(), **m.buffers()}.items()}
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Returns ``(model, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    m = build(ModelConfig.from_dict(meta["config"]), 0)
    if meta.get("dtype") and meta["dtype"] != str(m.classifier.weight.dtype):
        m = m.astype(np.dtype(meta["dtype"]))
    m.load_arrays(arrays)
    return m, meta
