import numpy as np
import pytest

from retcn import layers as L
from retcn.errors import BadAdjacency, BadConfig, DimMismatch
from retcn.tensor import make_rng

import oracles


def _x(rng, *shape):
    return rng.normal(size=shape).astype(np.float32)


def test_conv1x1_param_count():
    assert L.init_conv1x1(make_rng(0), 64, 64).param_count() == 4160


def test_conv1x1_matches_oracle_rank3_and_rank4(rng):
    p = L.init_conv1x1(make_rng(1), 5, 3)
    for shape in [(2, 5, 7), (2, 5, 7, 4)]:
        x = _x(rng, *shape)
        np.testing.assert_allclose(L.conv1x1_forward(p, x), oracles.conv1x1(p.weight, p.bias, x), atol=1e-5)


def test_temporal_convs_match_oracles(rng):
    x = _x(rng, 2, 4, 9, 3)
    dw = L.init_depthwise(make_rng(2), 4, 5)
    np.testing.assert_allclose(L.depthwise_forward(dw, x), oracles.depthwise(dw.weight, dw.bias, x), atol=1e-5)
    dsc = L.init_dsc(make_rng(3), 4, 6, 3)
    ref, _ = oracles.dsc_counted(dsc.dw.weight, dsc.dw.bias, dsc.pw.weight, dsc.pw.bias, x)
    np.testing.assert_allclose(L.layer_forward(dsc, x), ref, atol=1e-5)
    sc = L.init_standard_conv(make_rng(4), 4, 6, 7)
    ref, _ = oracles.standard_conv_counted(sc.weight, sc.bias, x)
    np.testing.assert_allclose(L.layer_forward(sc, x), ref, atol=1e-5)


def test_graphconv_matches_oracle(rng):
    a = L.normalized_adjacency(5, L.chain_edges(5))
    p = L.init_graphconv(make_rng(5), a, 3, 4)
    x = _x(rng, 2, 3, 6, 5)
    ref, _ = oracles.graphconv_counted(p.adjacency, p.weight, p.bias, x)
    np.testing.assert_allclose(L.graphconv_forward(p, x), ref, atol=1e-5)


def test_identity_depthwise_is_identity(rng):
    w = np.zeros((3, 5, 1), np.float32)
    w[:, 2, 0] = 1.0
    p = L.DepthwiseParams(w, np.zeros(3, np.float32))
    x = _x(rng, 1, 3, 8, 2)
    np.testing.assert_array_equal(L.depthwise_forward(p, x), x)


def test_adjacency_validation():
    with pytest.raises(BadAdjacency):
        L.check_adjacency(np.ones((2, 3)))
    with pytest.raises(BadAdjacency):
        L.check_adjacency(np.ones((2, 2)))
    with pytest.raises(BadAdjacency):
        L.normalized_adjacency(3, [(0, 3)])
    a = L.normalized_adjacency(4, [(0, 1), (1, 2)])
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
    assert a[3, 3] == 1.0


def test_shape_errors(rng):
    p = L.init_conv1x1(make_rng(0), 4, 2)
    with pytest.raises(DimMismatch):
        L.conv1x1_forward(p, _x(rng, 1, 3, 5, 2))
    with pytest.raises(DimMismatch):
        L.layer_backward(p, _x(rng, 1, 4, 5, 2), _x(rng, 1, 3, 5, 2))
    with pytest.raises(BadConfig):
        L.DepthwiseParams(np.zeros((2, 4, 1)), np.zeros(2))
    with pytest.raises(BadConfig):
        L.StandardConvParams(np.zeros((2, 2, 3)), np.zeros(2))


def test_output_shapes():
    rng = make_rng(0)
    assert L.layer_output_shape(L.init_dsc(rng, 4, 8, 3), (2, 4, 9, 5)) == (2, 8, 9, 5)
    assert L.layer_output_shape(L.init_depthwise(rng, 4, 3), (2, 4, 9, 5)) == (2, 4, 9, 5)
    assert L.layer_output_shape(L.init_batchnorm(4), (2, 4, 9)) == (2, 4, 9)


def test_dsc_param_count_formula():
    p = L.init_dsc(make_rng(0), 16, 32, 5)
    assert p.param_count() == 16 * 5 + 16 + 16 * 32 + 32


def test_batchnorm_train_normalises_and_updates(rng):
    p = L.init_batchnorm(3)
    x = (rng.normal(size=(8, 3, 5, 4)) * 3 + 2).astype(np.float32)
    y = L.batchnorm_forward(p, x, training=True, update=True)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    rows = np.moveaxis(x, 1, 0).reshape(3, -1).astype(np.float64)
    np.testing.assert_allclose(p.running_mean, 0.1 * rows.mean(axis=1), rtol=1e-5)
    np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * rows.var(axis=1, ddof=1), rtol=1e-5)


def test_batchnorm_inference_uses_running_stats(rng):
    p = L.init_batchnorm(2)
    p.running_mean[...] = [1.0, -1.0]
    p.running_var[...] = [4.0, 0.25]
    x = _x(rng, 3, 2, 4)
    expect = (x - p.running_mean[None, :, None]) / np.sqrt(p.running_var[None, :, None] + p.eps)
    np.testing.assert_allclose(L.layer_forward(p, x), expect, atol=1e-5)
    before = p.running_mean.copy()
    L.batchnorm_forward(p, x, training=True, update=False)
    np.testing.assert_array_equal(p.running_mean, before)


def test_astype_roundtrip():
    p = L.init_dsc(make_rng(0), 3, 4, 3).astype(np.float64)
    assert p.dw.weight.dtype == np.float64 and p.pw.bias.dtype == np.float64
    assert set(p.learnable()) == {"dw.weight", "dw.bias", "pw.weight", "pw.bias"}
