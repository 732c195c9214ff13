import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalrec.errors import ContractError, DimensionError
from causalrec.model import (
    CausalRec,
    ModelConfig,
    attention_logits,
    causal_boost,
    cba_layer_forward,
    embed_sequence,
    filter_attention,
    init_params,
    predict_scores,
    prefix_keep,
    relation_weights,
)
from causalrec.numerics import Tensor, ops


def small(**kw):
    cfg = dict(n_items=5, n_max=4, hidden=4, layers=1, dropout=0.0)
    cfg.update(kw)
    config = ModelConfig(**cfg)
    return config, init_params(config, np.random.default_rng(3))


class TestEmbedding:
    def test_item_plus_position(self):
        _, params = small()
        X = embed_sequence(np.array([0, 2, 5, 1]), params).data
        M, P = params["item_emb"].data, params["pos_emb"].data
        np.testing.assert_array_equal(X[2], M[5] + P[2])

    def test_all_padding_is_position_rows(self):
        _, params = small()
        X = embed_sequence(np.zeros(4, dtype=int), params).data
        np.testing.assert_array_equal(X, params["pos_emb"].data)

    def test_training_dropout_is_seeded(self):
        _, params = small()
        items = np.array([1, 2, 3, 4])
        a = embed_sequence(items, params, 0.5, True, np.random.default_rng(9)).data
        b = embed_sequence(items, params, 0.5, True, np.random.default_rng(9)).data
        np.testing.assert_array_equal(a, b)

    def test_length_checked(self):
        _, params = small()
        with pytest.raises(DimensionError):
            embed_sequence(np.ones(3, dtype=int), params)


class TestLogits:
    def test_zero_projections(self):
        _, params = small()
        params["layers.0.wq"] = Tensor(np.zeros((4, 4)))
        params["layers.0.wk"] = Tensor(np.zeros((4, 4)))
        assert np.all(attention_logits(np.ones((4, 4)), params, 0).data == 0)

    def test_entries_match_dot_products(self, rng):
        _, params = small()
        X = rng.standard_normal((4, 4))
        got = attention_logits(X, params, 0).data
        Q = X @ params["layers.0.wq"].data
        K = X @ params["layers.0.wk"].data
        for i in range(4):
            for j in range(4):
                want = sum(Q[i, d] * K[j, d] for d in range(4)) / math.sqrt(4)
                assert abs(got[i, j] - want) < 1e-5


class TestBoost:
    def test_alpha_zero_is_identity(self, rng):
        A = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(causal_boost(A, rng.integers(0, 2, (3, 3)), 0.0).data, A)

    def test_all_ones_doubles(self, rng):
        A = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(causal_boost(A, np.ones((3, 3)), 1.0).data, 2 * A)

    def test_hand_case(self):
        got = causal_boost(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0, 1], [1, 0]]), 0.5).data
        np.testing.assert_array_equal(got, [[1.0, 3.0], [4.5, 4.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            causal_boost(np.zeros((3, 3)), np.zeros((2, 2)), 1.0)


class TestFilter:
    def test_all_ones_is_plain_softmax(self, rng):
        A = rng.standard_normal((3, 3))
        np.testing.assert_allclose(filter_attention(A, np.ones((3, 3))).data, ops.softmax_rows(A).data)

    def test_all_zeros_filters_everything(self, rng):
        assert np.all(filter_attention(rng.standard_normal((3, 3)), np.zeros((3, 3))).data == 0)

    def test_hand_case_with_prefix_mask(self):
        keep = prefix_keep(np.array([1, 2]))
        got = filter_attention(np.zeros((2, 2)), np.array([[1, 0], [1, 1]]), 0.9, keep).data
        np.testing.assert_allclose(got, [[1.0, 0.0], [0.5, 0.5]])


class TestLayer:
    def test_dead_value_path_reduces_to_layer_norm(self, rng):
        config, params = small(alpha=0.0)
        for name in ("wv", "w1", "w2"):
            params[f"layers.0.{name}"] = Tensor(np.zeros((4, 4)))
        X = rng.standard_normal((4, 4))
        keep = prefix_keep(np.array([1, 2, 3, 4]))
        out, _ = cba_layer_forward(Tensor(X), np.zeros((4, 4)), params, 0, config, keep)
        np.testing.assert_allclose(out.data, ops.layer_norm(X, np.ones(4), np.zeros(4)).data, atol=1e-12)

    def test_padding_rows_get_zero_attention(self):
        config, params = small()
        items = np.array([0, 0, 3, 4])
        _, arts = CausalRec(config, params).forward(items)
        w = arts[0]["weights"]
        assert np.all(w[:2] == 0)
        assert np.all(w[:, :2] == 0)
        np.testing.assert_allclose(w[2:].sum(axis=1), 1.0)

    def test_prefix_mask_is_lower_triangular(self):
        keep = prefix_keep(np.array([1, 2, 3]))
        assert keep.tolist() == [[True, False, False], [True, True, False], [True, True, True]]

    def test_relation_weights_fallback(self):
        keep = prefix_keep(np.array([0, 1, 2]))
        R = np.array([[0, 0, 0], [0, 0, 0], [0, 1, 0]])
        w = relation_weights(R, keep)
        np.testing.assert_allclose(w, [[0, 0, 0], [0, 1, 0], [0, 1, 0]])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 3), st.integers(0, 2**31 - 1), st.sampled_from(["boost", "plain", "filter", "causal_only"]))
    def test_autoregressive(self, t, seed, mode):
        rng = np.random.default_rng(seed)
        config, params = small(layers=2, attention=mode)
        R = (rng.random((4, 4)) < 0.5).astype(float)
        items = rng.integers(1, 6, 4)
        other = items.copy()
        other[t + 1 :] = rng.integers(1, 6, 3 - t)
        model = CausalRec(config, params)
        a = model.forward(items, R)[0].data
        b = model.forward(other, R)[0].data
        np.testing.assert_array_equal(a[: t + 1], b[: t + 1])


class TestScores:
    def test_own_embedding_wins(self):
        _, params = small()
        M = np.eye(6, 4, k=-1)
        params["item_emb"] = Tensor(M)
        for i in range(1, 5):
            assert int(np.argmax(predict_scores(M[[i]], params, 0, [i]))) == i

    def test_zero_representation(self):
        _, params = small()
        s = predict_scores(np.zeros((1, 4)), params, 0, [3])
        assert s[0] == -np.inf and np.all(s[1:] == 0)

    def test_matches_per_item_dots(self, rng):
        _, params = small()
        h = rng.standard_normal((1, 4))
        s = predict_scores(h, params, 0, [2])
        M = params["item_emb"].data
        for i in range(1, 6):
            assert abs(s[i] - float(np.dot(M[i], h[0]))) < 1e-6

    def test_padding_position_rejected(self):
        _, params = small()
        with pytest.raises(ContractError):
            predict_scores(np.zeros((2, 4)), params, 0, [0, 1])


def test_init_contract():
    config, params = small(hidden=8, n_max=6)
    assert np.all(params["item_emb"].data[0] == 0)
    bound = 1 / math.sqrt(8)
    assert np.abs(params["layers.0.w1"].data).max() <= bound
    np.testing.assert_array_equal(params["layers.0.wo"].data, np.eye(8))


def test_config_validation():
    with pytest.raises(ContractError):
        ModelConfig(n_items=5, attention="fancy")
    with pytest.raises(ContractError):
        ModelConfig(n_items=5, alpha=-1.0)
