"""Analytical multiply-accumulate (MAC) and parameter counts.

MACs count multiplications only; bias additions are excluded from MACs but
biases are included in parameter counts. All arithmetic is on Python ints,
checked against the unsigned 64-bit range.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, Tuple

from .errors import CostOverflow, ZeroDim

U64_MAX = 2 ** 64 - 1

REPORT_HEADER = "MACs = multiply-accumulates (bias adds excluded); params include biases"


def _dims(**dims):
    for name, value in dims.items():
        if int(value) != value or value < 1:
            raise ZeroDim(f"{name} must be an integer >= 1, got {value!r}")


def _checked(value):
    if value > U64_MAX:
        raise CostOverflow(f"count {value} exceeds the unsigned 64-bit range")
    return value


def cost_conv1x1(n, c_in, c_out, t, v) -> int:
    _dims(N=n, C_in=c_in, C_out=c_out, T=t, V=v)
    return _checked(n * c_out * c_in * t * v)


def cost_two_step(n, c_in, c_mid, c_out, t, v) -> Tuple[int, Fraction]:
    """Total MACs of C_in -> C_mid -> C_out and its ratio to one C_in -> C_out conv."""
    _dims(N=n, C_in=c_in, C_mid=c_mid, C_out=c_out, T=t, V=v)
    first = _checked(n * c_mid * c_in * t * v)
    second = _checked(n * c_out * c_mid * t * v)
    total = _checked(first + second)
    return total, Fraction(total, cost_conv1x1(n, c_in, c_out, t, v))


def cost_standard_conv(t, v, c_in, c_out, k_h, k_w=1) -> int:
    _dims(T=t, V=v, C_in=c_in, C_out=c_out, K_h=k_h, K_w=k_w)
    return _checked(t * v * c_in * c_out * k_h * k_w)


def cost_depthwise(t, v, c_in, k_h, k_w=1) -> int:
    _dims(T=t, V=v, C_in=c_in, K_h=k_h, K_w=k_w)
    return _checked(t * v * c_in * k_h * k_w)


def cost_pointwise(t, v, c_in, c_out) -> int:
    _dims(T=t, V=v, C_in=c_in, C_out=c_out)
    return _checked(t * v * c_in * c_out)


def cost_dsc(t, v, c_in, c_out, k_h, k_w=1) -> Tuple[int, Fraction]:
    """Depthwise + pointwise MACs and the ratio to the standard convolution."""
    total = _checked(cost_depthwise(t, v, c_in, k_h, k_w) + cost_pointwise(t, v, c_in, c_out))
    ratio = Fraction(c_in * k_h * k_w + c_in * c_out, c_in * c_out * k_h * k_w)
    return total, ratio


def dsc_ratio_closed_form(c_out, k_h, k_w=1) -> Fraction:
    return Fraction(1, k_h * k_w) + Fraction(1, c_out)


def cost_graphconv(t, v, c_in, c_out) -> int:
    """Joint aggregation (V x V per channel and frame) then channel mixing."""
    _dims(T=t, V=v, C_in=c_in, C_out=c_out)
    return _checked(t * (c_in * v * v + c_out * c_in * v))


def dsc_param_count(c_in, c_out, k_h, k_w=1) -> int:
    return c_in * k_h * k_w + c_in * c_out + c_in + c_out


def standard_conv_param_count(c_in, c_out, k_h, k_w=1) -> int:
    return c_in * c_out * k_h * k_w + c_out


@dataclass
class CostReport:
    macs: int = 0
    params: int = 0
    breakdown: List[Tuple[str, int, int]] = field(default_factory=list)

    def add(self, name, macs, params):
        self.breakdown.append((name, int(macs), int(params)))
        self.macs = _checked(self.macs + int(macs))
        self.params = _checked(self.params + int(params))

    def to_text(self) -> str:
        width = max([len("layer")] + [len(n) for n, _, _ in self.breakdown])
        lines = [f"# {REPORT_HEADER}", f"{'layer':<{width}}  {'macs':>14}  {'params':>10}"]
        for name, macs, params in self.breakdown:
            lines.append(f"{name:<{width}}  {macs:>14,}  {params:>10,}")
        lines.append(f"{'total':<{width}}  {self.macs:>14,}  {self.params:>10,}")
        return "\n".join(lines)

    def to_records(self) -> List[dict]:
        rows = [{"record": "layer", "name": n, "macs": m, "params": p} for n, m, p in self.breakdown]
        rows.append({"record": "total", "macs": self.macs, "params": self.params})
        return rows


def layer_macs(layer, t, v) -> int:
    """MACs of one layer (one sample) acting on a (T, V) extent."""
    from .atw import AtwParams
    from .layers import (BatchNormParams, Conv1x1Params, DepthwiseParams, DSCParams,
                         GraphConvParams, StandardConvParams)

    if isinstance(layer, AtwParams):
        convs = sum(cost_conv1x1(1, c.c_in, c.c_out, t, 1) for c in layer.convs)
        return _checked(convs + layer.channels * t * v)  # + frame rescaling
    if isinstance(layer, DSCParams):
        return cost_dsc(t, v, layer.c_in, layer.c_out, layer.kernel)[0]
    if isinstance(layer, GraphConvParams):
        return cost_graphconv(t, v, layer.c_in, layer.c_out)
    if isinstance(layer, Conv1x1Params):
        return cost_conv1x1(1, layer.c_in, layer.c_out, t, v)
    if isinstance(layer, DepthwiseParams):
        return cost_depthwise(t, v, layer.channels, layer.kernel)
    if isinstance(layer, StandardConvParams):
        return cost_standard_conv(t, v, layer.c_in, layer.c_out, layer.kernel)
    if isinstance(layer, BatchNormParams):
        _dims(t=t, v=v)
        return _checked(layer.channels * t * v)  # one scale per element at inference
    raise TypeError(f"no cost formula for {type(layer).__name__}")


def count_model(model, t=None, v=None) -> CostReport:
    """Walk a model (anything with ``named_layers()`` yielding
    ``(name, layer, (T, V))``) or an iterable of ``(name, layer)`` pairs
    evaluated at the given ``t``/``v``."""
    report = CostReport()
    if hasattr(model, "named_layers"):
        entries: Iterable = model.named_layers()
    else:
        entries = ((name, layer, (t or 1, v or 1)) for name, layer in model)
    for name, layer, (lt, lv) in entries:
        report.add(name, layer_macs(layer, lt, lv), layer.param_count())
    return report
