import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threads_desk import slide_encoder as se
from threads_desk.numerics import ShapeError
from threads_desk.slide_encoder import PatchBag, SlideEncoderConfig

SMALL = SlideEncoderConfig(input_dim=3, hidden_dim=4, heads=2, attention_dim=3, output_dim=5)


def small_params(cfg=SMALL, seed=0):
    return se.init_params(cfg, np.random.default_rng(seed))


# ---- straight-line scalar oracle


def _affine(rows, W, b):
    return [[sum(r[i] * W[i][j] for i in range(len(r))) + b[j] for j in range(len(b))] for r in rows]


def _ln(row, g, beta, eps):
    mu = sum(row) / len(row)
    var = sum((x - mu) ** 2 for x in row) / len(row)
    return [(x - mu) / math.sqrt(var + eps) * g[i] + beta[i] for i, x in enumerate(row)]


def _gelu(x):
    return 0.5 * x * (1 + math.erf(x / math.sqrt(2)))


def oracle_encode(X, p, cfg):
    P = {k: v.tolist() for k, v in p.items()}
    h = X.tolist()
    for i in range(cfg.pre_attention_layers):
        h = _affine(h, P[f"pre.{i}.W"], P[f"pre.{i}.b"])
        h = [[_gelu(x) for x in _ln(r, P[f"pre.{i}.ln.g"], P[f"pre.{i}.ln.beta"], cfg.ln_eps)] for r in h]
    pooled = []
    d = cfg.hidden_dim
    for m in range(cfg.heads):
        hm = [r[m * d:(m + 1) * d] for r in h]
        A = _affine(hm, P[f"head.{m}.a.W"], P[f"head.{m}.a.b"])
        B = _affine(hm, P[f"head.{m}.b.W"], P[f"head.{m}.b.b"])
        G = [[math.tanh(a) / (1 + math.exp(-b)) for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]
        alpha = [r[0] for r in _affine(G, P[f"head.{m}.c.W"], P[f"head.{m}.c.b"])]
        top = max(alpha)
        e = [math.exp(a - top) for a in alpha]
        w = [x / sum(e) for x in e]
        pooled.extend(sum(w[n] * hm[n][j] for n in range(len(hm))) for j in range(d))
    return np.array(_affine([pooled], P["post.W"], P["post.b"])[0])


def test_scalar_oracle():
    X = np.random.default_rng(1).normal(size=(3, SMALL.input_dim))
    p = small_params()
    np.testing.assert_allclose(se.encode_bag(PatchBag("b", X), p, SMALL), oracle_encode(X, p, SMALL),
                               rtol=0, atol=1e-10)


def test_scalar_oracle_single_head():
    cfg = SlideEncoderConfig(input_dim=3, hidden_dim=4, heads=1, output_dim=2)
    X = np.random.default_rng(2).normal(size=(3, 3))
    p = small_params(cfg)
    assert np.abs(se.encode_bag(X, p, cfg) - oracle_encode(X, p, cfg)).max() < 1e-10


def test_default_widths():
    cfg = SlideEncoderConfig()
    assert cfg.layer_widths() == [(768, 1024), (1024, 1024), (1024, 2048)]
    assert cfg.gate_dim == 1024


class TestPreAttention:
    def test_zero_weights_give_zero(self):
        p = {k: np.zeros_like(v) for k, v in small_params().items()}
        for i in range(SMALL.pre_attention_layers):
            p[f"pre.{i}.ln.g"][:] = 1.0
        out = se.pre_attention(np.ones((4, 3)), p, SMALL)
        np.testing.assert_array_equal(out, np.zeros((4, SMALL.heads * SMALL.hidden_dim)))

    def test_single_patch_shape(self):
        assert se.pre_attention(np.ones((1, 3)), small_params(), SMALL).shape == (1, 8)

    def test_seeded_training_is_deterministic(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        a = se.pre_attention(X, small_params(), SMALL, np.random.default_rng(7), training=True)
        b = se.pre_attention(X, small_params(), SMALL, np.random.default_rng(7), training=True)
        np.testing.assert_array_equal(a, b)

    def test_wrong_width(self):
        with pytest.raises(ShapeError):
            se.pre_attention(np.ones((2, 4)), small_params(), SMALL)


class TestGatedAttention:
    def test_zero_gate(self):
        p = {"head.0.a.W": np.zeros((2, 3)), "head.0.a.b": np.zeros(3), "head.0.b.W": np.zeros((2, 3)),
             "head.0.b.b": np.zeros(3), "head.0.c.W": np.zeros((3, 1)), "head.0.c.b": np.zeros(1)}
        np.testing.assert_array_equal(se.gated_attention_scores(np.ones((5, 2)), p), np.zeros((5, 1)))

    def test_one_dimensional_toy(self):
        p = {"head.0.a.W": np.array([[1.0]]), "head.0.a.b": np.zeros(1),
             "head.0.b.W": np.array([[0.0]]), "head.0.b.b": np.array([50.0]),
             "head.0.c.W": np.array([[1.0]]), "head.0.c.b": np.zeros(1)}
        alpha = se.gated_attention_scores(np.array([[0.5], [-0.5]]), p)[:, 0]
        np.testing.assert_allclose(alpha, [0.4621, -0.4621], atol=1e-4)
        np.testing.assert_allclose(alpha, [math.tanh(0.5), -math.tanh(0.5)], atol=1e-12)


class TestAttentionPool:
    def test_closed_form(self):
        np.testing.assert_allclose(se.attention_pool(np.eye(2), np.array([math.log(3), 0.0])), [0.75, 0.25])

    def test_identical_rows(self, rng):
        row = rng.normal(size=4)
        np.testing.assert_allclose(se.attention_pool(np.tile(row, (5, 1)), rng.normal(size=5)), row, atol=1e-14)

    def test_uniform_scores_give_mean(self, rng):
        h = rng.normal(size=(6, 3))
        np.testing.assert_allclose(se.attention_pool(h, np.zeros(6)), h.mean(axis=0), atol=1e-14)

    def test_single_patch_weight_one(self):
        w = se.attention_weights(np.ones((1, 3)), small_params(), SMALL)
        np.testing.assert_array_equal(w, np.ones((2, 1)))


class TestEncodeBag:
    def test_output_shape(self):
        assert se.encode_bag(np.ones((2, 3)), small_params(), SMALL).shape == (5,)

    def test_default_output_dim(self):
        cfg = SlideEncoderConfig(input_dim=4, hidden_dim=4)
        assert se.encode_bag(np.ones((2, 4)), se.init_params(cfg, np.random.default_rng(0)), cfg).shape == (1024,)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31))
    def test_permutation_invariance(self, n, seed):
        r = np.random.default_rng(seed)
        X = r.normal(size=(n, 3))
        p = small_params(seed=seed % 7)
        base = se.encode_bag(X, p, SMALL)
        np.testing.assert_allclose(se.encode_bag(X[r.permutation(n)], p, SMALL), base, rtol=0, atol=1e-9)

    def test_single_head_matches_generic_path(self):
        cfg = SlideEncoderConfig(input_dim=3, hidden_dim=4, heads=1, output_dim=2)
        X = np.random.default_rng(3).normal(size=(4, 3))
        p = small_params(cfg)
        h = se.pre_attention(X, p, cfg)
        chunks = [h[:, m * cfg.hidden_dim:(m + 1) * cfg.hidden_dim] for m in range(cfg.heads)]
        pooled = np.concatenate([se.attention_pool(c, se.gated_attention_scores(c, p, head=m))
                                 for m, c in enumerate(chunks)])
        np.testing.assert_array_equal(se.encode_bag(X, p, cfg), pooled @ p["post.W"] + p["post.b"])

    def test_training_dropout_changes_output(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        p = small_params()
        a = se.encode_bag(X, p, SMALL, np.random.default_rng(1), training=True)
        b = se.encode_bag(X, p, SMALL)
        assert not np.allclose(a, b)

    def test_empty_bag_rejected(self):
        with pytest.raises(ValueError):
            PatchBag("x", np.zeros((0, 3)))

    def test_non_finite_bag_rejected(self):
        with pytest.raises(ValueError):
            PatchBag("x", np.array([[np.nan, 0.0, 0.0]]))


class TestEncodePatient:
    def test_single_bag(self, rng):
        bag = PatchBag("a", rng.normal(size=(4, 3)))
        np.testing.assert_array_equal(se.encode_patient([bag], small_params(), SMALL),
                                      se.encode_bag(bag, small_params(), SMALL))

    def test_union_of_bags(self, rng):
        a, b = PatchBag("a", rng.normal(size=(4, 3))), PatchBag("b", rng.normal(size=(2, 3)))
        p = small_params()
        np.testing.assert_array_equal(se.encode_patient([a, b], p, SMALL),
                                      se.encode_bag(np.vstack([a.X, b.X]), p, SMALL))

    def test_bag_order(self, rng):
        a, b = PatchBag("a", rng.normal(size=(4, 3))), PatchBag("b", rng.normal(size=(2, 3)))
        p = small_params()
        np.testing.assert_allclose(se.encode_patient([a, b], p, SMALL), se.encode_patient([b, a], p, SMALL),
                                   rtol=0, atol=1e-12)

    def test_no_bags(self):
        with pytest.raises(ValueError):
            se.encode_patient([], small_params(), SMALL)
