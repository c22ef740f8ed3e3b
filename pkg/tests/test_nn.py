"""Forward contracts and finite-difference checks for every differentiable primitive."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from locost import nn
from locost.graph import Tensor, grad_check
from locost.ssm import PARAM_FIELDS, init_s4d


def leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def probe(out, seed=0):
    """Random linear functional of ``out``, so every output entry matters."""
    R = np.random.default_rng(seed).normal(size=out.shape)
    return nn.total(nn.mul(out, R))


class TestLinear:
    def test_identity(self, rng):
        x = rng.normal(size=(4, 3))
        np.testing.assert_allclose(nn.linear(Tensor(x), Tensor(np.eye(3))).data, x)

    def test_zero_input_gives_bias(self):
        out = nn.linear(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 2))), Tensor(np.array([1.0, -2.0])))
        np.testing.assert_allclose(out.data, [[1, -2], [1, -2]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        with pytest.raises(ValueError):
            nn.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))), Tensor(np.zeros(3)))

    def test_gradient(self, rng):
        x, W, b = leaf(rng.normal(size=(5, 3))), leaf(rng.normal(size=(3, 2))), leaf(rng.normal(size=2))
        report = grad_check(lambda: probe(nn.linear(x, W, b)), [x, W, b], eps=1e-5, tol=1e-6)
        assert report.passed, report


class TestLayerNorm:
    def test_constant_row(self):
        out = nn.layer_norm(Tensor(np.full((2, 5), 3.0)), Tensor(np.ones(5)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_unit_variance(self, rng):
        out = nn.layer_norm(Tensor(rng.normal(3.0, 5.0, size=(10, 16))), Tensor(np.ones(16))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-5)

    def test_gain_scales(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        g = np.array([1.0, 2.0, 0.0, -1.0])
        np.testing.assert_allclose(nn.layer_norm(x, Tensor(g)).data, nn.layer_norm(x, Tensor(np.ones(4))).data * g)

    def test_gain_shape(self):
        with pytest.raises(ValueError):
            nn.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(4)))

    def test_gradient(self, rng):
        x, g = leaf(rng.normal(size=(4, 6))), leaf(rng.normal(size=6))
        report = grad_check(lambda: probe(nn.layer_norm(x, g)), [x, g], eps=1e-5, tol=1e-6)
        assert report.passed, report


class TestGeLU:
    def test_known_values(self):
        x = np.array([-1.0, 0.0, 1.0, 3.0])
        want = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(nn.gelu(Tensor(x)).data, want, rtol=1e-15)
        assert nn.gelu(Tensor(np.zeros(1))).data[0] == 0.0

    def test_close_to_exact_erf_form(self):
        x = np.linspace(-4, 4, 81)
        exact = 0.5 * x * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))
        np.testing.assert_allclose(nn.gelu(Tensor(x)).data, exact, atol=1e-3)


class TestGatedFF:
    def weights(self, rng, H=3, F=5):
        return leaf(rng.normal(size=(H, F))), leaf(rng.normal(size=(H, F))), leaf(rng.normal(size=(F, H)))

    def test_closed_gate(self, rng):
        w1, _, wo = self.weights(rng)
        out = nn.gated_gelu_ff(Tensor(rng.normal(size=(4, 3))), w1, Tensor(np.zeros((3, 5))), wo)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_zero_input(self, rng):
        out = nn.gated_gelu_ff(Tensor(np.zeros((4, 3))), *self.weights(rng))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_shape_mismatch(self, rng):
        w1, w2, _ = self.weights(rng)
        with pytest.raises(ValueError):
            nn.gated_gelu_ff(Tensor(np.zeros((4, 3))), w1, w2, Tensor(np.zeros((3, 5))))

    def test_gradient(self, rng):
        x = leaf(rng.normal(size=(4, 3)))
        ws = self.weights(rng)
        report = grad_check(lambda: probe(nn.gated_gelu_ff(x, *ws)), [x, *ws], eps=1e-5, tol=1e-6)
        assert report.passed, report


class TestAttention:
    def params(self, rng, H):
        return {k: leaf(rng.normal(size=(H, H)) / math.sqrt(H)) for k in ("wq", "wk", "wv", "wo")}

    def test_single_key(self, rng):
        H = 4
        p = self.params(rng, H)
        q = Tensor(rng.normal(size=(3, H)))
        kv = rng.normal(size=(1, H))
        out = nn.multi_head_attention(q, Tensor(kv), p, heads=2)
        want = kv @ p["wv"].data @ p["wo"].data
        np.testing.assert_allclose(out.data, np.repeat(want, 3, axis=0), atol=1e-12)

    @given(st.integers(1, 6), st.integers(1, 6), st.booleans())
    def test_probabilities_normalized(self, Lq, Lk, causal):
        rng = np.random.default_rng(Lq * 7 + Lk)
        if causal:
            Lk = Lq
        p = nn.attention_probs(rng.normal(size=(Lq, 6)), rng.normal(size=(Lk, 6)), heads=3, causal=causal)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
        if causal:
            assert np.all(np.triu(p, k=1) == 0.0)

    def test_key_mask(self, rng):
        p = nn.attention_probs(rng.normal(size=(2, 4)), rng.normal(size=(5, 4)), heads=1, key_mask=[True, True, False, True, False])
        assert np.all(p[..., [2, 4]] == 0.0)

    def test_heads_must_divide(self, rng):
        with pytest.raises(nn.ConfigError):
            nn.multi_head_attention(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))), self.params(rng, 6), heads=4)

    def test_causal_independence_from_future(self, rng):
        H = 6
        p = self.params(rng, H)
        y = rng.normal(size=(5, H))
        base = nn.multi_head_attention(Tensor(y), Tensor(y), p, heads=2, causal=True).data
        y2 = y.copy()
        y2[3] += 1.0
        moved = nn.multi_head_attention(Tensor(y2), Tensor(y2), p, heads=2, causal=True).data
        np.testing.assert_array_equal(base[:3], moved[:3])
        assert not np.allclose(base[3:], moved[3:])

    @pytest.mark.parametrize("causal", [False, True])
    def test_gradient_cross(self, rng, causal):
        H = 6
        q = leaf(rng.normal(size=(3, H)))
        kv = leaf(rng.normal(size=(3 if causal else 4, H)))
        p = self.params(rng, H)
        report = grad_check(lambda: probe(nn.multi_head_attention(q, kv, p, 2, causal)), [q, kv, *p.values()], eps=1e-5, tol=1e-5)
        assert report.passed, report


class TestEmbedding:
    def test_repeat_row(self, rng):
        table = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(nn.embedding([0, 0], Tensor(table)).data, table[[0, 0]])

    def test_grad_counts(self):
        table = leaf(np.zeros((4, 2)))
        nn.total(nn.embedding([1, 3, 1, 1], table)).backward()
        np.testing.assert_array_equal(table.grad[:, 0], [0, 3, 0, 1])

    @pytest.mark.parametrize("ids", [[4], [-1], [0, 9]])
    def test_out_of_range(self, ids):
        with pytest.raises(ValueError):
            nn.embedding(ids, Tensor(np.zeros((4, 2))))

    def test_gradient(self, rng):
        table = leaf(rng.normal(size=(6, 3)))
        report = grad_check(lambda: probe(nn.embedding([[1, 2, 1], [5, 0, 2]], table)), [table], eps=1e-5, tol=1e-6)
        assert report.passed, report


class TestCrossEntropy:
    @pytest.mark.parametrize("V", [2, 7, 100])
    def test_uniform(self, V):
        loss = nn.cross_entropy(Tensor(np.zeros((3, V))), [1, 1, 1], ignore_id=0)
        np.testing.assert_allclose(loss.item(), math.log(V), rtol=1e-14)

    def test_margin_limit(self):
        losses = []
        for margin in (1.0, 10.0, 50.0):
            logits = np.zeros((2, 4))
            logits[:, 2] = margin
            losses.append(nn.cross_entropy(Tensor(logits), [2, 2]).item())
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-20

    def test_ignored_positions(self, rng):
        logits = rng.normal(size=(4, 5))
        full = nn.cross_entropy(Tensor(logits[:2]), [3, 4]).item()
        masked = nn.cross_entropy(Tensor(logits), [3, 4, 0, 0]).item()
        np.testing.assert_allclose(full, masked, rtol=1e-14)

    def test_all_ignored(self):
        with pytest.raises(ValueError):
            nn.cross_entropy(Tensor(np.zeros((2, 3))), [0, 0])

    def test_stable_for_huge_logits(self):
        assert np.isfinite(nn.cross_entropy(Tensor(np.array([[1e300, 0.0, -1e300]])), [1]).item())

    def test_gradient(self, rng):
        logits = leaf(rng.normal(size=(3, 7)))
        report = grad_check(lambda: nn.cross_entropy(logits, [1, 0, 6]), [logits], eps=1e-5, tol=1e-6)
        assert report.passed, report


class TestDropout:
    def test_identity_when_not_training(self, rng):
        x = Tensor(rng.normal(size=5))
        assert nn.dropout(x, 0.5, rng, training=False) is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones(200_000))
        out = nn.dropout(x, 0.25, np.random.default_rng(0), training=True).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        np.testing.assert_allclose(out.mean(), 1.0, atol=0.01)


class TestSSMOps:
    def test_kernel_and_conv_gradient(self, rng):
        L, H = 6, 2
        state = init_s4d(H, 2, seed=3)
        params = {f: leaf(getattr(state, f)) for f in PARAM_FIELDS}
        u = leaf(rng.normal(size=(L, H)))
        d = leaf(rng.normal(size=H))

        def f():
            k = nn.ssm_kernel(params, L)
            return probe(nn.bidirectional_conv(u, k, k, d))

        report = grad_check(f, [u, d, *params.values()], eps=1e-5, tol=1e-5)
        assert report.passed, report

    def test_conv_shape_check(self):
        with pytest.raises(ValueError):
            nn.bidirectional_conv(Tensor(np.zeros((4, 2))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))


def test_sinusoidal_positions():
    P = nn.sinusoidal_positions(5, 4)
    np.testing.assert_allclose(P[:, 0], np.sin(np.arange(5)))
    np.testing.assert_allclose(P[:, 1], np.cos(np.arange(5)))
    np.testing.assert_allclose(P[:, 2], np.sin(np.arange(5) / 100.0))
