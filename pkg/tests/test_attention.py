import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dinat_ir.attention import (AttentionConfig, NeighborhoodAttention2d, attn_layer, dense_attention,
                                dense_oracle, dina_attend, dina_attend_composed, effective_dilation,
                                effective_window, neighbor_map, rel_index)
from dinat_ir.errors import DimensionError, GeometryError
from dinat_ir.tensor import Tape, Tensor, backward
from dinat_ir.verify import attention_suite


def _qkv(rng, B, h, H, W, d):
    return [rng.standard_normal((B, h, H, W, d)) for _ in range(3)]


# neighbor_map ---------------------------------------------------------------

def test_neighbor_map_interior():
    got = neighbor_map((4, 4), 9, 9, 3, 1)
    assert got == [(y, x) for y in (3, 4, 5) for x in (3, 4, 5)]


def test_neighbor_map_corner_shift():
    got = neighbor_map((0, 0), 9, 9, 3, 1)
    assert got == [(y, x) for y in (0, 1, 2) for x in (0, 1, 2)]


def test_neighbor_map_dilated_clamp():
    got = neighbor_map((1, 1), 8, 8, 3, 2)
    assert got == [(y, x) for y in (1, 3, 5) for x in (1, 3, 5)]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1, 3, 5]), st.integers(1, 3), st.data())
def test_neighbor_map_properties(k, delta, data):
    H = data.draw(st.integers(k * delta, 16))
    W = data.draw(st.integers(k * delta, 16))
    y, x = data.draw(st.integers(0, H - 1)), data.draw(st.integers(0, W - 1))
    nb = neighbor_map((y, x), H, W, k, delta)
    assert len(nb) == k * k and len(set(nb)) == k * k
    assert (y, x) in nb
    assert nb == sorted(nb)
    for ny, nx in nb:
        assert 0 <= ny < H and 0 <= nx < W
        assert ny % delta == y % delta and nx % delta == x % delta


def test_rel_index_examples():
    assert rel_index((3, 3), (3, 3), 2, 3) == (2, 2)
    assert rel_index((5, 2), (1, 4), 2, 3) == (0, 3)


def test_rel_index_bijective_for_interior_queries():
    k, delta, H = 3, 2, 12
    for y, x in itertools.product(range(H), range(H)):
        if delta * (k - 1) <= y < H - delta * (k - 1) and delta * (k - 1) <= x < H - delta * (k - 1):
            idx = [rel_index((y, x), n, delta, k) for n in neighbor_map((y, x), H, H, k, delta)]
            centre = range(k - 1 - k // 2, k + k // 2)
            assert sorted(idx) == list(itertools.product(centre, centre))


# clamping -------------------------------------------------------------------

def test_auto_clamp_dilation():
    assert effective_dilation(36, 7, 64, 64) == (9, 9)
    assert effective_dilation(4, 7, 64, 32) == (4, 4)
    assert effective_dilation(2, 3, 8, 4) == (2, 1)


def test_auto_clamp_window():
    assert effective_window(7, 2, 2) == (1, 1)
    assert effective_window(3, 4, 2) == (3, 1)


def test_geometry_error_without_clamp(rng):
    cfg = AttentionConfig(channels=2, heads=1, k=3, dilation=3, auto_clamp=False)
    q, k, v = _qkv(rng, 1, 1, 6, 6, 2)
    with pytest.raises(GeometryError):
        dina_attend(Tensor(q), Tensor(k), Tensor(v), None, cfg)


def test_config_validation():
    with pytest.raises(Exception):
        AttentionConfig(channels=6, heads=4)
    with pytest.raises(Exception):
        AttentionConfig(channels=4, heads=1, k=4)


# dina_attend ----------------------------------------------------------------

def test_full_window_equals_dense_attention(rng):
    cfg = AttentionConfig(channels=6, heads=2, k=5, dilation=1)
    q, k, v = _qkv(rng, 2, 2, 5, 5, 3)
    got = dina_attend(Tensor(q), Tensor(k), Tensor(v), None, cfg).data
    assert np.max(np.abs(got - dense_attention(q, k, v))) < 1e-10


def test_constant_values_pass_through(rng):
    cfg = AttentionConfig(channels=4, heads=2, k=3, dilation=2)
    q, k, _ = _qkv(rng, 1, 2, 8, 8, 2)
    v = np.full_like(q, 0.37)
    bias = rng.standard_normal((2, 5, 5))
    out = dina_attend(Tensor(q), Tensor(k), Tensor(v), Tensor(bias), cfg).data
    np.testing.assert_allclose(out, 0.37, atol=1e-14)


@pytest.mark.parametrize("delta", [1, 2])
def test_matches_dense_oracle_6x6(rng, delta):
    cfg = AttentionConfig(channels=4, heads=2, k=3, dilation=delta)
    q, k, v = _qkv(rng, 2, 2, 6, 6, 2)
    bias = rng.standard_normal((2, 5, 5))
    got = dina_attend(Tensor(q), Tensor(k), Tensor(v), Tensor(bias), cfg).data
    assert np.max(np.abs(got - dense_oracle(q, k, v, bias, cfg))) < 1e-10


def test_oracle_agreement_50_seeds():
    worst = 0.0
    for s in range(50):
        r = np.random.default_rng(s)
        H, W = r.choice([4, 6, 8]), r.choice([4, 6, 8])
        k, delta = int(r.choice([1, 3])), int(r.choice([1, 2]))
        cfg = AttentionConfig(channels=2, heads=1, k=k, dilation=delta)
        q, kt, v = _qkv(r, 1, 1, H, W, 2)
        bias = r.standard_normal((1, 2 * k - 1, 2 * k - 1))
        got = dina_attend(Tensor(q), Tensor(kt), Tensor(v), Tensor(bias), cfg).data
        worst = max(worst, np.max(np.abs(got - dense_oracle(q, kt, v, bias, cfg))))
    assert worst < 1e-10


def test_oracle_single_pixel_returns_v(rng):
    cfg = AttentionConfig(channels=2, heads=1, k=1, dilation=1)
    q, k, v = _qkv(rng, 1, 1, 1, 1, 2)
    np.testing.assert_array_equal(dense_oracle(q, k, v, None, cfg), v)


def test_dilation_one_is_plain_na(rng):
    na = AttentionConfig(channels=4, heads=2, k=3, dilation=1)
    q, k, v = _qkv(rng, 1, 2, 8, 8, 2)
    bias = rng.standard_normal((2, 5, 5))
    a = dina_attend(Tensor(q), Tensor(k), Tensor(v), Tensor(bias), na).data
    b = dense_oracle(q, k, v, bias, na)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_fused_backward_matches_composed(rng):
    cfg = AttentionConfig(channels=4, heads=2, k=3, dilation=2)
    arrays = _qkv(rng, 1, 2, 6, 8, 2) + [rng.standard_normal((2, 5, 5))]
    grads = []
    for fn in (dina_attend, dina_attend_composed):
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        with Tape() as tape:
            out = fn(*ts, cfg)
            from dinat_ir import functional as F
            loss = F.sum(F.mul(out, out))
        backward(loss, tape)
        grads.append([t.grad for t in ts])
    for g1, g2 in zip(*grads):
        np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_attn_layer_shape_and_errors(rng):
    cfg = AttentionConfig(channels=4, heads=2, k=3, dilation=2)
    layer = NeighborhoodAttention2d(cfg, rng, np.float64)
    assert layer.rpb.shape == (2, 5, 5) and not layer.rpb.data.any()
    out = attn_layer(Tensor(rng.standard_normal((2, 4, 8, 8))), layer, cfg)
    assert out.shape == (2, 4, 8, 8)
    with pytest.raises(DimensionError):
        attn_layer(Tensor(rng.standard_normal((1, 6, 8, 8))), layer, cfg)


def test_attention_grad_suite():
    failures = {k: r.max_rel_err for k, r in attention_suite(0).items() if not r.passed}
    assert not failures
