import os
import subprocess
import sys

import numpy as np
import pytest

from retcn import kernels

import oracles


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k", [1, 3, 5, 9])
def test_backends_agree(dtype, k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(2, 3, 11, 4)).astype(dtype)
    w = rng.normal(size=(3, k)).astype(dtype)
    b = rng.normal(size=3).astype(dtype)
    d = rng.normal(size=x.shape).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    ref = oracles.depthwise(w, b, x)
    for backend in (None, "python"):
        out = kernels.depthwise_forward(x, w, b, backend=backend)
        assert out.dtype == dtype
        np.testing.assert_allclose(out, ref, atol=tol)
    gx, gw, gb = kernels.depthwise_backward(x, w, d)
    px, pw, pb = kernels.depthwise_backward(x, w, d, backend="python")
    np.testing.assert_allclose(gx, px, atol=tol * 10)
    np.testing.assert_allclose(gw, pw, atol=tol * 100)
    np.testing.assert_allclose(gb, pb, atol=tol * 100)


def test_kernel_longer_than_sequence():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 2, 3, 2))
    w = rng.normal(size=(2, 9))
    b = np.zeros(2)
    np.testing.assert_allclose(kernels.depthwise_forward(x, w, b), oracles.depthwise(w, b, x), atol=1e-12)


def test_pure_python_switch():
    env = dict(os.environ, RETCN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import retcn; print(retcn.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_compiled_backend_built():
    # the editable install builds the extension; report which one is active
    assert kernels.BACKEND in ("compiled", "python")
    if os.environ.get("RETCN_PURE_PYTHON") != "1":
        assert kernels.BACKEND == "compiled"
