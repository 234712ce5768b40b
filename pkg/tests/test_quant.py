import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbcompress.prune import proxy_loss
from sbcompress.quant import (QuantGrid, build_grid, dequantized_weight, quant_order, quantize_network, rtn,
                              sbc_quantize)

from conftest import mlp, random_spd, random_spikes, small_cnn
from oracles import nearest_level


def test_grid_example():
    g = build_grid(np.array([[1.5], [-0.2]]), 2)
    assert g.scale[0] == 1.5
    np.testing.assert_array_equal(g.levels(0), [-3.0, -1.5, 0.0, 1.5])
    assert (g.qmin, g.qmax) == (-2, 1)


def test_zero_channel():
    w = np.zeros((3, 2))
    w[:, 1] = [0.3, -0.1, 0.2]
    q = rtn(w, build_grid(w, 3))
    assert q.grid.scale[0] == 1.0
    assert not q.codes[:, 0].any() and not q.reconstruct()[:, 0].any()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bits=st.sampled_from([2, 3, 4, 8]))
def test_channel_max_exact(seed, bits):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((7, 4)) * rng.uniform(1e-3, 1e3)
    w[rng.integers(7), :] = np.abs(w).max(axis=0) * 1.0
    q = rtn(w, build_grid(w, bits))
    rec = q.reconstruct()
    col_max = w.max(axis=0)
    for c in range(4):
        i = int(np.argmax(w[:, c]))
        assert rec[i, c] == col_max[c]


def test_rtn_examples():
    g = build_grid(np.array([[1.5], [0.0]]), 2)
    q = rtn(np.array([[0.7], [0.8]]), g)
    np.testing.assert_array_equal(q.reconstruct()[:, 0], [0.0, 1.5])
    half = rtn(np.array([[0.75], [-0.75]]), g)
    np.testing.assert_array_equal(half.codes[:, 0], [0, 0])


def test_rtn_fixed_point(rng):
    codes = rng.integers(-3, 4, size=(6, 3))
    codes[0] = 3
    w = QuantGrid(3, np.array([0.7, 0.25, 2e3])).value(codes)
    q = rtn(w, build_grid(w, 3))
    np.testing.assert_array_equal(q.codes, codes)
    np.testing.assert_array_equal(q.reconstruct(), w)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bits=st.sampled_from([2, 3, 4]))
def test_rtn_is_nearest_level(seed, bits):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((6, 2))
    g = build_grid(w, bits)
    rec = rtn(w, g).reconstruct()
    for c in range(2):
        for i in range(6):
            assert rec[i, c] == nearest_level(w[i, c], g.levels(c))


def test_diagonal_hessian_equals_rtn(rng):
    w = rng.standard_normal((6, 4))
    g = build_grid(w, 3)
    q = sbc_quantize(w, g, np.diag(rng.random(6) + 0.1))
    np.testing.assert_array_equal(q.codes, rtn(w, g).codes)
    one = rng.standard_normal((1, 3))
    g1 = build_grid(one, 2)
    np.testing.assert_array_equal(sbc_quantize(one, g1, np.eye(1)).codes, rtn(one, g1).codes)


def test_order_ascending_diag_ties_by_index():
    np.testing.assert_array_equal(quant_order(np.diag([2.0, 1.0, 2.0, 0.5])), [3, 1, 0, 2])


def reference_sweep(w, g, hinv):
    """Literal sequential OBS quantization with physical inverse removal."""
    w = w.copy()
    d = w.shape[0]
    delta = g.delta(w.shape)
    codes = np.zeros(w.shape, np.int64)
    alive = list(range(d))
    h_now = hinv.copy()
    for p in quant_order(hinv):
        k = alive.index(p)
        r = w[p] / delta[p]
        c = np.clip(np.sign(r) * np.ceil(np.abs(r) - 0.5), g.qmin, g.qmax)
        codes[p] = c
        err = w[p] - c * delta[p]
        w[alive] -= np.outer(h_now[:, k] / h_now[k, k], err)
        w[p] = c * delta[p]
        h_now = h_now - np.outer(h_now[:, k], h_now[k]) / h_now[k, k]
        h_now = np.delete(np.delete(h_now, k, 0), k, 1)
        alive.pop(k)
    return codes


def test_sweep_matches_reference(rng):
    h = random_spd(rng, 9, cond=30)
    w = rng.standard_normal((9, 5))
    g = build_grid(w, 3)
    q = sbc_quantize(w, g, np.linalg.inv(h))
    np.testing.assert_array_equal(q.codes, reference_sweep(w, g, np.linalg.inv(h)))
    assert q.fallback == -1


def test_proxy_beats_rtn_on_random_neurons():
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        h = random_spd(rng, 8, cond=100)
        w = rng.standard_normal((8, 1))
        g = build_grid(w, 3)
        l_sbc = proxy_loss(w, sbc_quantize(w, g, np.linalg.inv(h)).reconstruct(), h)
        l_rtn = proxy_loss(w, rtn(w, g).reconstruct(), h)
        wins += l_sbc <= l_rtn
    assert wins >= 90


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bits=st.sampled_from([2, 3, 4]))
def test_codes_within_grid(seed, bits):
    rng = np.random.default_rng(seed)
    h = random_spd(rng, 7, cond=1e4)
    w = rng.standard_normal((7, 3))
    g = build_grid(w, bits)
    q = sbc_quantize(w, g, np.linalg.inv(h))
    assert q.codes.min() >= g.qmin and q.codes.max() <= g.qmax


def test_singular_pivot_falls_back_to_rtn():
    hinv = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    w = np.array([[0.3], [0.9], [-0.6]])
    g = build_grid(w, 3)
    q = sbc_quantize(w, g, hinv)
    assert q.fallback == 1
    np.testing.assert_array_equal(q.codes[1], rtn(w, g).codes[1])


def test_high_precision_limit(rng):
    net = small_cnn(rng)
    x = random_spikes(rng, (10, 4, 2, 5, 5))
    qnet, rep = quantize_network(net, x, 16, method="rtn")
    np.testing.assert_allclose(qnet["conv0"].tensors["weight"], net["conv0"].tensors["weight"],
                               atol=1e-3)
    assert [e["bits"] for e in rep["modules"]] == [16, 16]


def test_quantized_nodes_carry_codes(rng):
    net = mlp(rng)
    x = random_spikes(rng, (20, 6, 12))
    qnet, rep = quantize_network(net, x, 3, method="sbc")
    for name in ("fc0", "fc1"):
        node = qnet[name]
        np.testing.assert_array_equal(dequantized_weight(node), node.tensors["weight"])
        assert node.attrs["bits"] == 3
        assert node.tensors["codes"].min() >= -4 and node.tensors["codes"].max() <= 3
    for e in rep["modules"]:
        assert e["rtn_fallback_step"] is None and e["proxy_loss"] >= 0


def test_quantize_validation(rng):
    net = mlp(rng)
    with pytest.raises(ValueError):
        quantize_network(net, np.zeros((2, 6, 12)), 1)
    with pytest.raises(ValueError):
        quantize_network(net, np.zeros((2, 6, 12)), 3, method="nope")
