import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avturn import tensor as T
from avturn.attention import (
    AttentionWeights, CrossAttention, SelfAttention, attention_logits, audio_self_attention,
    av_cross_attention, qkv_project, visual_self_attention, within_segment,
)
from avturn.tensor import Tensor, grad_check


def rng(seed=0):
    return np.random.default_rng(seed)


def test_qkv_identity_projection():
    x = rng().normal(size=(4, 3))
    q, k, v = qkv_project(Tensor(x), Tensor(np.eye(3)), Tensor(np.eye(3)), Tensor(np.eye(3)))
    for t in (q, k, v):
        np.testing.assert_array_equal(t.data, x)


def test_qkv_zero_input_zero_outputs():
    blk = SelfAttention(4, 8, rng())
    q, k, v = qkv_project(np.zeros((2, 4)), blk.qkv.q.weight, blk.qkv.k.weight, blk.qkv.v.weight)
    assert not (q.data.any() or k.data.any() or v.data.any())


def test_qkv_dim_mismatch():
    with pytest.raises(T.ShapeError):
        qkv_project(np.ones((2, 4)), np.ones((3, 3)), np.ones((3, 3)), np.ones((3, 3)))


def test_qkv_gradient():
    wq, wk, wv = (rng(i).normal(size=(3, 2)) for i in range(3))
    out_w = rng(5).normal(size=(4, 2))

    def f(x):
        q, k, v = qkv_project(x, Tensor(wq), Tensor(wk), Tensor(wv))
        return ((q * k + v) * out_w).sum()
    assert grad_check(f, rng(6).normal(size=(4, 3))).passed


def test_visual_single_sroi():
    blk = SelfAttention(4, 8, rng())
    f = rng(1).normal(size=(1, 1, 4))
    z, alpha = visual_self_attention(Tensor(f), blk)
    assert alpha.data.item() == pytest.approx(1.0)
    v = f.reshape(1, 4) @ blk.qkv.v.weight.data
    np.testing.assert_allclose(z.data.reshape(1, 4), blk.refine(Tensor(f.reshape(1, 4) + v)).data)


def test_visual_identical_features_uniform():
    blk = SelfAttention(4, 8, rng())
    f = np.tile(rng(2).normal(size=4), (3, 2, 1))
    _, alpha = visual_self_attention(Tensor(f), blk)
    np.testing.assert_allclose(alpha.data, np.full((6, 6), 1 / 6))


def test_visual_empty_set_rejected():
    with pytest.raises(ValueError):
        visual_self_attention(Tensor(np.zeros((0, 2, 4))), SelfAttention(4, 8, rng()))


def test_visual_self_attention_spans_all_segments():
    blk = SelfAttention(4, 8, rng())
    z, alpha = visual_self_attention(Tensor(rng(3).normal(size=(3, 2, 4))), blk)
    assert z.shape == (3, 2, 4) and alpha.shape == (6, 6)
    np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)


def test_audio_self_attention_examples():
    blk = SelfAttention(4, 8, rng())
    _, a1 = audio_self_attention(Tensor(rng().normal(size=(1, 4))), blk)
    assert a1.data.item() == pytest.approx(1.0)
    f = np.tile(rng(4).normal(size=4), (2, 1))
    _, a2 = audio_self_attention(Tensor(f), blk)
    np.testing.assert_allclose(a2.data, [[0.5, 0.5], [0.5, 0.5]])


def test_audio_self_attention_gradient():
    blk = SelfAttention(3, 5, rng(7))
    w = rng(8).normal(size=(3, 3))
    assert grad_check(lambda x: (audio_self_attention(x, blk)[0] * w).sum(), rng(9).normal(size=(3, 3))).passed


def test_visual_self_attention_gradient():
    blk = SelfAttention(3, 5, rng(10))
    w = rng(11).normal(size=(2, 2, 3))
    assert grad_check(lambda x: (visual_self_attention(x, blk)[0] * w).sum(),
                      rng(12).normal(size=(2, 2, 3))).passed


def test_cross_single_key():
    blk = CrossAttention(4, 8, rng())
    za = rng(1).normal(size=(1, 4))
    zv = rng(2).normal(size=(1, 1, 4))
    z, alpha = av_cross_attention(Tensor(za), Tensor(zv), blk)
    assert alpha.shape == (1, 1, 1) and alpha.data.item() == pytest.approx(1.0)
    v = zv.reshape(1, 4) @ blk.qkv.v.weight.data
    np.testing.assert_allclose(z.data, blk.refine(Tensor(za + v)).data)


def test_cross_identical_keys_uniform():
    blk = CrossAttention(4, 8, rng())
    zv = np.tile(rng(3).normal(size=4), (2, 3, 1))
    _, alpha = av_cross_attention(Tensor(rng(4).normal(size=(2, 4))), Tensor(zv), blk)
    np.testing.assert_allclose(alpha.data, np.full((2, 2, 3), 1 / 6))


def test_cross_within_segment_mass_at_most_one():
    blk = CrossAttention(4, 8, rng())
    _, alpha = av_cross_attention(Tensor(rng(5).normal(size=(3, 4))), Tensor(rng(6).normal(size=(3, 2, 4))), blk)
    w = within_segment(alpha).data
    assert w.shape == (3, 2)
    np.testing.assert_allclose(w.sum(axis=1), alpha.data[np.arange(3), np.arange(3)].sum(axis=1))
    assert (w.sum(axis=1) <= 1 + 1e-12).all()
    np.testing.assert_array_equal(AttentionWeights(alpha.data, "k,k'i").within_segment(), w)


def test_cross_mismatched_segments():
    blk = CrossAttention(4, 8, rng())
    with pytest.raises(T.ShapeError):
        av_cross_attention(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 2, 4))), blk)


def test_cross_gradient_both_streams():
    blk = CrossAttention(3, 4, rng(13))
    za = rng(14).normal(size=(2, 3))
    zv = rng(15).normal(size=(2, 2, 3))
    w = rng(16).normal(size=(2, 3))
    wa = rng(17).normal(size=(2, 2))
    assert grad_check(lambda x: (av_cross_attention(x, zv, blk)[0] * w).sum(), za).passed
    assert grad_check(lambda x: (within_segment(av_cross_attention(za, x, blk)[1]) * wa).sum(), zv).passed


def test_cross_permuting_sroi_order():
    blk = CrossAttention(4, 8, rng())
    za = Tensor(rng(18).normal(size=(2, 4)))
    zv = rng(19).normal(size=(2, 3, 4))
    perm = [2, 0, 1]
    z1, a1 = av_cross_attention(za, Tensor(zv), blk)
    z2, a2 = av_cross_attention(za, Tensor(zv[:, perm]), blk)
    np.testing.assert_allclose(z2.data, z1.data, atol=1e-12)
    np.testing.assert_allclose(a2.data, a1.data[:, :, perm], atol=1e-15)


def test_attention_weights_validation():
    with pytest.raises(ValueError):
        AttentionWeights(np.array([[0.6, 0.6]]), "keys")
    AttentionWeights(np.array([[0.25, 0.75]]), "keys")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 5), st.sampled_from([2, 4, 8]))
def test_rows_are_distributions(seed, K, N, d):
    r = rng(seed)
    za = Tensor(r.normal(0, 3, size=(K, d)))
    zv = Tensor(r.normal(0, 3, size=(K, N, d)))
    blk = CrossAttention(d, 4, r)
    _, alpha = av_cross_attention(za, zv, blk)
    rows = alpha.data.reshape(K, -1)
    assert (rows >= 0).all() and np.abs(rows.sum(axis=1) - 1).max() <= 1e-6
    _, av = visual_self_attention(zv, SelfAttention(d, 4, r))
    assert np.abs(av.data.sum(axis=1) - 1).max() <= 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-50, 50))
def test_logit_shift_invariance(seed, c):
    r = rng(seed)
    logits = attention_logits(Tensor(r.normal(size=(3, 4))), Tensor(r.normal(size=(5, 4))))
    a = T.softmax(logits, axis=-1).data
    b = T.softmax(logits + c, axis=-1).data
    assert np.abs(a - b).max() <= 1e-9
