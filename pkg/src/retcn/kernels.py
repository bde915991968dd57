"""Backend selection for the depthwise temporal convolution kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``RETCN_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("RETCN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _prep(*arrays):
    dtype = np.result_type(*arrays)
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def depthwise_forward(x, w, b, backend=None):
    impl = _kernels_py if backend == "python" else _impl
    x, w, b = _prep(x, w, b)
    return impl.depthwise_forward(x, w, b)


def depthwise_backward(x, w, d_out, backend=None):
    impl = _kernels_py if backend == "python" else _impl
    x, w, d_out = _prep(x, w, d_out)
    return impl.depthwise_backward(x, w, d_out)
