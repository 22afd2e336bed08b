"""Attention tests against an independent per-head numpy reference."""

from __future__ import annotations

import numpy as np
import pytest

from fdcheck import check_gradients
from gcalab import tensor as T
from gcalab.attention import (
    AttentionConfig,
    Encoder,
    EncoderBlock,
    MultiHeadAttention,
    SequenceBatch,
    add_position_embedding,
    apply_mask,
)
from gcalab.errors import ConfigError, ContractError, DimensionError
from gcalab.tensor import ParameterStore, Tensor


def reference_attention(q, kv, wq, wk, wv, wo, heads, kv_mask, causal):
    """Loop-over-heads reference: no reshapes, explicit row softmax."""
    batch, len_q, d = q.shape
    len_k = kv.shape[1]
    hd = d // heads
    qp, kp, vp = q @ wq, kv @ wk, kv @ wv
    context = np.zeros((batch, len_q, d))
    for h in range(heads):
        cols = slice(h * hd, (h + 1) * hd)
        scores = qp[..., cols] @ kp[..., cols].transpose(0, 2, 1) / np.sqrt(hd)
        for b in range(batch):
            for i in range(len_q):
                visible = kv_mask[b].copy()
                if causal:
                    visible &= np.arange(len_k) <= i
                if not visible.any():
                    continue
                row = scores[b, i]
                w = np.zeros(len_k)
                e = np.exp(row[visible] - row[visible].max())
                w[visible] = e / e.sum()
                context[b, i, cols] = w @ vp[b, :, cols]
    return context @ wo


def make_mha(d=8, heads=2, seed=3):
    store = ParameterStore(seed=seed)
    return MultiHeadAttention(store, "attn", d, heads), store


def make_batch(rng, batch=3, length=5, lengths=None, domain="a"):
    lengths = lengths if lengths is not None else rng.integers(1, length + 1, size=batch)
    ids = np.zeros((batch, length), dtype=np.int64)
    mask = np.zeros((batch, length), dtype=bool)
    for b, l in enumerate(lengths):
        ids[b, :l] = rng.integers(1, 50, size=l)
        mask[b, :l] = True
    return SequenceBatch(ids=ids, mask=mask, domain=domain)


class TestSequenceBatch:
    def test_padding_invariant_enforced(self):
        with pytest.raises(ContractError):
            SequenceBatch(ids=np.array([[1, 2]]), mask=np.array([[True, False]]), domain="a")

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            SequenceBatch(ids=np.zeros((2, 3), dtype=int), mask=np.zeros((2, 4), dtype=bool), domain="a")

    def test_unknown_domain(self):
        with pytest.raises(ContractError):
            SequenceBatch(ids=np.zeros((1, 2), dtype=int), mask=np.zeros((1, 2), dtype=bool), domain="c")

    def test_with_hidden_checks_cover(self):
        batch = SequenceBatch(ids=np.zeros((2, 3), dtype=int), mask=np.zeros((2, 3), dtype=bool), domain="b")
        with pytest.raises(DimensionError):
            batch.with_hidden(Tensor(np.zeros((2, 4, 8))))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(d=0, heads=1),
            dict(d=8, heads=3),
            dict(d=8, heads=2, dropout_p=1.0),
            dict(d=8, heads=2, max_len=0),
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigError):
            AttentionConfig(**kwargs)


class TestMultiHeadAttention:
    @pytest.mark.parametrize("heads,causal", [(1, False), (2, False), (2, True), (4, True)])
    def test_matches_reference(self, heads, causal):
        rng = np.random.default_rng(20 + heads)
        d, batch, length = 8, 3, 5
        mha, _ = make_mha(d=d, heads=heads)
        q = rng.normal(size=(batch, length, d))
        kv = q if causal else rng.normal(size=(batch, 4, d))
        kv_mask = np.ones(kv.shape[:2], dtype=bool)
        kv_mask[0, -1] = False
        got = mha(Tensor(q), Tensor(kv), kv_mask, causal=causal).data
        want = reference_attention(
            q, kv, mha.wq.tensor.data, mha.wk.tensor.data, mha.wv.tensor.data,
            mha.wo.tensor.data, heads, kv_mask, causal,
        )
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_masked_kv_positions_have_no_influence(self):
        rng = np.random.default_rng(30)
        mha, _ = make_mha()
        q = Tensor(rng.normal(size=(2, 3, 8)))
        kv = rng.normal(size=(2, 6, 8))
        kv_mask = rng.random((2, 6)) < 0.5
        kv_mask[:, 0] = True
        poked = kv.copy()
        poked[~kv_mask] = 99.0
        a = mha(q, Tensor(kv), kv_mask, causal=False).data
        b = mha(q, Tensor(poked), kv_mask, causal=False).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_kv_sequence_yields_zero_rows(self):
        rng = np.random.default_rng(31)
        mha, _ = make_mha()
        q = Tensor(rng.normal(size=(2, 3, 8)))
        kv = Tensor(rng.normal(size=(2, 4, 8)))
        kv_mask = np.ones((2, 4), dtype=bool)
        kv_mask[1] = False
        out = mha(q, kv, kv_mask, causal=False).data
        assert (out[1] == 0.0).all()
        assert np.abs(out[0]).max() > 0.0

    def test_causal_requires_square(self):
        mha, _ = make_mha()
        with pytest.raises(ContractError):
            mha(Tensor(np.zeros((1, 3, 8))), Tensor(np.zeros((1, 4, 8))), np.ones((1, 4), bool), causal=True)

    def test_gradients(self):
        rng = np.random.default_rng(32)
        mha, store = make_mha(d=4, heads=2)
        q = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        kv = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        kv_mask = np.array([[True, True, False], [True, True, True]])
        weights = Tensor(rng.normal(size=(2, 3, 4)))
        leaves = {"q": q, "kv": kv}
        leaves.update({p.name: p.tensor for p in store.parameters()})
        check_gradients(lambda: (mha(q, kv, kv_mask, causal=False) * weights).sum(), leaves)


class TestEncoderBlock:
    def _block(self, d=8, heads=2, dropout=0.0, seed=40):
        store = ParameterStore(seed=seed)
        cfg = AttentionConfig(d=d, heads=heads, dropout_p=dropout)
        return EncoderBlock(store, "enc.block0", cfg), store

    def test_future_positions_do_not_affect_past(self):
        rng = np.random.default_rng(41)
        block, _ = self._block()
        batch = make_batch(rng, batch=2, length=6, lengths=[6, 6])
        hidden = rng.normal(size=(2, 6, 8))
        base = block(batch.with_hidden(Tensor(hidden))).data
        poked = hidden.copy()
        poked[:, 4] += 3.0
        out = block(batch.with_hidden(Tensor(poked))).data
        np.testing.assert_allclose(out[:, :4], base[:, :4], atol=1e-12)
        assert np.abs(out[:, 4:] - base[:, 4:]).max() > 1e-6

    def test_padding_rows_stay_zero(self):
        rng = np.random.default_rng(42)
        block, _ = self._block()
        batch = make_batch(rng, batch=3, length=5, lengths=[5, 2, 0])
        hidden = rng.normal(size=(3, 5, 8)) * batch.mask[:, :, None]
        out = block(batch.with_hidden(Tensor(hidden))).data
        assert (out[~batch.mask] == 0.0).all()
        assert (out[2] == 0.0).all()

    def test_gradients(self):
        rng = np.random.default_rng(43)
        block, store = self._block(d=4, heads=2, seed=44)
        batch = make_batch(rng, batch=2, length=3, lengths=[3, 2])
        x = Tensor(rng.normal(size=(2, 3, 4)) * batch.mask[:, :, None], requires_grad=True)
        weights = Tensor(rng.normal(size=(2, 3, 4)))
        leaves = {"x": x}
        leaves.update({p.name: p.tensor for p in store.parameters()})
        check_gradients(lambda: (block(batch.with_hidden(x)) * weights).sum(), leaves)

    def test_dropout_deterministic_given_rng_seed(self):
        rng = np.random.default_rng(45)
        block, _ = self._block(dropout=0.3)
        batch = make_batch(rng, batch=2, length=4, lengths=[4, 3])
        hidden = Tensor(rng.normal(size=(2, 4, 8)) * batch.mask[:, :, None])
        a = block(batch.with_hidden(hidden), train_rng=np.random.default_rng(7)).data
        b = block(batch.with_hidden(hidden), train_rng=np.random.default_rng(7)).data
        c = block(batch.with_hidden(hidden), train_rng=np.random.default_rng(8)).data
        np.testing.assert_array_equal(a, b)
        assert np.abs(a - c).max() > 0.0


class TestEncoder:
    def test_stack_runs_and_masks(self):
        rng = np.random.default_rng(50)
        store = ParameterStore(seed=51)
        cfg = AttentionConfig(d=8, heads=2, dropout_p=0.0)
        encoder = Encoder(store, "enc", cfg, layers=2)
        batch = make_batch(rng, batch=3, length=6, lengths=[6, 4, 1])
        hidden = rng.normal(size=(3, 6, 8)) * batch.mask[:, :, None]
        out = encoder(batch.with_hidden(Tensor(hidden))).data
        assert out.shape == (3, 6, 8)
        assert (out[~batch.mask] == 0.0).all()

    def test_layer_count_validated(self):
        store = ParameterStore(seed=0)
        with pytest.raises(ConfigError):
            Encoder(store, "enc", AttentionConfig(d=8, heads=2), layers=0)


class TestPositionEmbedding:
    def test_adds_expected_rows(self):
        rng = np.random.default_rng(60)
        batch = make_batch(rng, batch=2, length=4, lengths=[4, 2])
        hidden = rng.normal(size=(2, 4, 6)) * batch.mask[:, :, None]
        table = Tensor(rng.normal(size=(8, 6)))
        out = add_position_embedding(batch.with_hidden(Tensor(hidden)), table).data
        expected = (hidden + table.data[:4][None]) * batch.mask[:, :, None]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_sequence_longer_than_table(self):
        rng = np.random.default_rng(61)
        batch = make_batch(rng, batch=1, length=5, lengths=[5])
        hidden = Tensor(rng.normal(size=(1, 5, 4)) * batch.mask[:, :, None])
        with pytest.raises(DimensionError):
            add_position_embedding(batch.with_hidden(hidden), Tensor(np.zeros((3, 4))))

    def test_requires_embedded_batch(self):
        rng = np.random.default_rng(62)
        batch = make_batch(rng, batch=1, length=3, lengths=[2])
        with pytest.raises(ContractError):
            add_position_embedding(batch, Tensor(np.zeros((4, 8))))


def test_apply_mask_zeroes_and_preserves():
    rng = np.random.default_rng(70)
    x = rng.normal(size=(2, 3, 4))
    mask = np.array([[True, False, True], [False, False, True]])
    out = apply_mask(Tensor(x), mask).data
    assert (out[~mask] == 0.0).all()
    np.testing.assert_allclose(out[mask], x[mask])
