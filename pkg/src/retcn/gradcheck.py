"""Central finite-difference checks for every hand-written backward pass.

Each check builds a layer (or a tiny model) in float32, takes a float64
shadow copy, and compares analytical gradients of ``sum(out * d_out)``
(cross-entropy for the model) against ``(f(w + h) - f(w - h)) / 2h``.

The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``. The
floor only matters for entries whose true gradient is zero (for example a
bias feeding a training-mode batch norm), where both values are rounding
noise.

Rectifiers and max pooling are piecewise linear. A probe that straddles a
kink is redrawn, a bounded number of times. For the model the kink test is
exact (any rectifier changes state between w - h, w and w + h); for single
layers it compares the two one-sided differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import atw as atw_mod
from . import layers as L
from .tensor import make_rng

H = 1e-3
FLOOR = 1e-6
LAYER_TOL = 1e-4
MODEL_TOL = 1e-3

LAYER_KINDS = ("conv1x1", "pointwise", "depthwise", "dsc", "standard_conv", "graphconv",
               "batchnorm", "batchnorm_train", "atw_mean", "atw_max", "atw_global_mean",
               "atw_global_max", "atw_plain")


@dataclass
class CheckResult:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_record(self):
        return {"record": "gradcheck", "name": self.name, "trials": self.trials,
                "max_rel_error": self.max_rel_error, "tolerance": self.tolerance,
                "passed": self.passed}


def rel_error(analytic, numeric, floor=FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _probe(f: Callable, arr: np.ndarray, idx, h=H, state: Callable = None):
    """Central difference at ``arr[idx]`` and whether a kink lies inside the
    probe. ``state``, if given, returns a hashable summary of every piecewise
    choice made by the last ``f`` call."""
    orig = arr[idx]
    f0 = f()
    s0 = state() if state else None
    arr[idx] = orig + h
    fp = f()
    sp = state() if state else None
    arr[idx] = orig - h
    fm = f()
    sm = state() if state else None
    arr[idx] = orig
    if state:
        kink = not (s0 == sp == sm)
    else:
        right, left = (fp - f0) / h, (f0 - fm) / h
        kink = abs(right - left) > 1e-2 * max(abs(right), abs(left), 1e-3)
    return (fp - fm) / (2 * h), kink


def _check_arrays(f, targets: Dict[str, tuple], rng, probes: int, retries: int = 5,
                  state: Callable = None) -> float:
    """``targets`` maps a name to ``(array, analytic_grad)``; ``probes``
    random entries of each are checked. Returns the worst relative error."""
    worst = 0.0
    for name, (arr, grad) in targets.items():
        for _ in range(min(probes, arr.size)):
            for attempt in range(retries + 1):
                idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
                numeric, kink = _probe(f, arr, idx, state=state)
                if not kink or attempt == retries:
                    break
            worst = max(worst, rel_error(float(grad[idx]), numeric))
    return worst


def _random_layer(kind, rng):
    """(layer, x, forward, backward) in float64 for a random small instance."""
    n = int(rng.integers(1, 4))
    c_in = int(rng.integers(1, 7))
    c_out = int(rng.integers(1, 7))
    t = int(rng.integers(3, 10))
    v = int(rng.integers(1, 6))
    k = int(rng.choice([1, 3, 5]))
    fwd, bwd = L.layer_forward, L.layer_backward
    if kind == "conv1x1":
        layer = L.init_conv1x1(rng, c_in, c_out)
    elif kind == "pointwise":
        layer = L.init_pointwise(rng, c_in, c_out)
    elif kind == "depthwise":
        layer, c_out = L.init_depthwise(rng, c_in, k), c_in
    elif kind == "dsc":
        layer = L.init_dsc(rng, c_in, c_out, k)
    elif kind == "standard_conv":
        layer = L.init_standard_conv(rng, c_in, c_out, k)
    elif kind == "graphconv":
        edges = [(i, int(rng.integers(0, i))) for i in range(1, v)]
        layer = L.init_graphconv(rng, L.normalized_adjacency(v, edges), c_in, c_out)
    elif kind.startswith("batchnorm"):
        training = kind == "batchnorm_train"
        n = max(n, 2)
        layer = L.init_batchnorm(c_in)
        layer.gamma[...] = rng.uniform(0.5, 1.5, c_in)
        layer.beta[...] = rng.uniform(-0.5, 0.5, c_in)
        layer.running_mean[...] = rng.uniform(-0.5, 0.5, c_in)
        layer.running_var[...] = rng.uniform(0.5, 2.0, c_in)

        def fwd(p, x, training=training):
            return L.batchnorm_forward(p, x, training=training)

        def bwd(p, x, d, training=training):
            return L.batchnorm_backward(p, x, d, training=training)
    elif kind.startswith("atw"):
        pooling = {"atw_mean": "mean", "atw_max": "max", "atw_global_mean": "global_mean",
                   "atw_global_max": "global_max", "atw_plain": "mean"}[kind]
        c = int(rng.integers(2, 17))
        c_in = c
        if kind == "atw_plain":
            layer = atw_mod.build_atw(rng, c, 8, pooling, num_layers=1, reduce=False)
        else:
            layer = atw_mod.build_atw(rng, c, int(rng.choice([1, 2, 4, 8])), pooling)

        def fwd(p, x):
            return atw_mod.atw_forward(p, x)[0]

        bwd = atw_mod.atw_backward
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    layer = layer.astype(np.float64)
    x = rng.normal(size=(n, c_in, t, v))
    return layer, x, fwd, bwd


def check_layer(kind: str, trials: int = 10, seed: int = 0, probes: int = 6) -> CheckResult:
    worst = 0.0
    for trial in range(trials):
        rng = make_rng(seed, LAYER_KINDS.index(kind), trial)
        layer, x, fwd, bwd = _random_layer(kind, rng)
        d_out = rng.normal(size=fwd(layer, x).shape)

        def f():
            return float(np.sum(fwd(layer, x) * d_out))

        g = bwd(layer, x, d_out)
        params = layer.learnable()
        targets = {"input": (x, g.d_input)}
        targets.update({k: (params[k], g.d_params[k]) for k in params})
        worst = max(worst, _check_arrays(f, targets, rng, probes))
    return CheckResult(kind, trials, worst, LAYER_TOL)


def tiny_model_config():
    from .model import ModelConfig

    return ModelConfig(num_classes=3, V=4, T=6, channel_plan=(3, 4), temporal_kernel=3,
                       atw_placement=("early", "late"), reduction_ratio=2)


def _relu_state(cache) -> bytes:
    masks = []
    for _, _, g_pre, _, _, pre in cache["blocks"]:
        masks += [g_pre > 0, pre > 0]
    return b"".join(np.packbits(mk).tobytes() for mk in masks)


def check_model(trials: int = 10, seed: int = 0, probes: int = 2, training: bool = True) -> CheckResult:
    """End-to-end cross-entropy gradient of a tiny model, every learnable
    tensor plus the input."""
    from .model import backward, build, forward_cached
    from .train import cross_entropy

    cfg = tiny_model_config()
    worst = 0.0
    for trial in range(trials):
        rng = make_rng(seed, len(LAYER_KINDS), trial)
        m = build(cfg, rng).astype(np.float64)
        for arr in m.buffers().values():
            arr += rng.uniform(0.0, 0.5, arr.shape)
        x = rng.normal(size=(2, cfg.in_channels, cfg.T, cfg.V))
        labels = rng.integers(0, cfg.num_classes, size=2)
        last = {}

        def f():
            logits, last["cache"] = forward_cached(m, x, training=training)
            return cross_entropy(logits, labels)[0]

        logits, cache = forward_cached(m, x, training=training)
        _, d_logits = cross_entropy(logits, labels)
        grads, d_x = backward(m, cache, d_logits)
        targets = {"input": (x, d_x)}
        targets.update({k: (arr, grads[k]) for k, arr in m.learnable().items()})
        worst = max(worst, _check_arrays(f, targets, rng, probes, retries=20,
                                         state=lambda: _relu_state(last["cache"])))
    name = "model(train-mode)" if training else "model(inference)"
    return CheckResult(name, trials, worst, MODEL_TOL)


def run_suite(trials: int = 10, seed: int = 0) -> List[CheckResult]:
    results = [check_layer(kind, trials, seed) for kind in LAYER_KINDS]
    results.append(check_model(trials, seed, training=True))
    results.append(check_model(trials, seed, training=False))
    return results
