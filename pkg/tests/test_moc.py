"""Mixture-of-controllers block against independent brute-force oracles."""

import math

import numpy as np
import pytest

from motiongen.errors import DimensionMismatchError
from motiongen.moc import (
    MoCConfig,
    ada_in,
    attention_mask,
    blend_expert,
    cross_attend,
    expert_forward,
    init_moc_params,
    moc_forward,
    moc_fwd,
)
from motiongen.text import TextConditioning


def make_cond(rng, n=3, d_c=12, eos=None):
    return TextConditioning(
        embeddings=rng.standard_normal((n, d_c)).astype(np.float32),
        eos_index=n - 1 if eos is None else eos,
        token_mask=np.ones(n, dtype=np.float32),
    )


def make_params(rng, d_model=10, d_c=12, config=None, randomize_convs=True):
    config = config or MoCConfig(d_m=8, pool_size=3)
    tensors = init_moc_params(d_model, d_c, config, rng)
    if randomize_convs:
        for name in ("up.w", "down.w"):
            tensors[name] = rng.standard_normal(tensors[name].shape).astype(np.float32) * 0.1
    return tensors, config


# ---------------------------------------------------------------------------
# independent reference implementations (explicit loops, float64)

def oracle_softmax(row):
    e = [math.exp(v - max(row)) for v in row]
    s = sum(e)
    return [v / s for v in e]


def oracle_gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def oracle_cross_attend(f, emb, q_w, k_w, v_w):
    l, d_m = f.shape
    n = emb.shape[0]
    q = f @ q_w
    k = emb @ k_w
    v = emb @ v_w
    att = np.zeros((l, n))
    out = np.array(f, dtype=np.float64, copy=True)
    for i in range(l):
        logits = [float(q[i] @ k[j]) / math.sqrt(d_m) for j in range(n)]
        att[i] = oracle_softmax(logits)
        for j in range(n):
            out[i] += att[i, j] * v[j]
    return out, att


def oracle_ada_in(f, eos_emb, w, b):
    l, d_m = f.shape
    out = np.zeros_like(f)
    affine = eos_emb @ w + b
    for c in range(d_m):
        col = f[:, c]
        mu = col.mean()
        var = ((col - mu) ** 2).mean()
        normed = (col - mu) / math.sqrt(var + 1e-5)
        out[:, c] = normed * (1.0 + affine[c]) + affine[d_m + c]
    return out


def oracle_gate(emb_i, p):
    h0 = np.array([oracle_gelu(v) for v in emb_i @ p["gate.w0"] + p["gate.b0"]])
    h1 = np.array([oracle_gelu(v) for v in h0 @ p["gate.w1"] + p["gate.b1"]])
    logits = h1 @ p["gate.w2"] + p["gate.b2"]
    return np.array(oracle_softmax(list(logits)))


def oracle_expert(y, e):
    z = y @ e["w0"] + e["b0"]
    h = np.vectorize(oracle_gelu)(z)
    return h @ e["w1"] + e["b1"]


def oracle_moc_forward(h, emb, eos_index, p, config):
    """Full block, token-by-token, in float64."""
    p = {k: v.astype(np.float64) for k, v in p.items()}
    h = h.astype(np.float64)
    emb = emb.astype(np.float64)
    f = h @ p["down.w"] + p["down.b"]
    f_att, att = oracle_cross_attend(f, emb, p["q.w"], p["k.w"], p["v.w"])
    y = oracle_ada_in(f_att, emb[eos_index], p["adain.w"], p["adain.b"])
    l, n = att.shape
    total = np.zeros_like(y)
    for i in range(n):
        omega = oracle_gate(emb[i], p)
        expert = {
            key: sum(omega[j] * p[f"pool.{key}"][j] for j in range(config.pool_size))
            for key in ("w0", "b0", "w1", "b1")
        }
        u = oracle_expert(y, expert)
        if config.use_attention_mask:
            col = att[:, i]
            m = 1.0 / (1.0 + np.exp(-config.gamma * (col - config.beta * col.max())))
            u = u * m[:, None]
        total += u
    return total @ p["up.w"] + p["up.b"]


# ---------------------------------------------------------------------------

class TestCrossAttend:
    def test_single_token_broadcast(self, rng):
        tensors, _ = make_params(rng)
        cond = make_cond(rng, n=1)
        f = rng.standard_normal((5, 8)).astype(np.float32)
        f2, att = cross_attend(f, cond, tensors)
        np.testing.assert_allclose(att, 1.0, atol=1e-6)
        v = cond.embeddings @ tensors["v.w"]
        np.testing.assert_allclose(f2, f + v[0], atol=1e-5)

    def test_zero_value_projection(self, rng):
        tensors, _ = make_params(rng)
        tensors["v.w"][:] = 0.0
        cond = make_cond(rng)
        f = rng.standard_normal((4, 8)).astype(np.float32)
        f2, att = cross_attend(f, cond, tensors)
        np.testing.assert_array_equal(f2, f)
        np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-5)

    def test_matches_oracle(self, rng):
        tensors, _ = make_params(rng)
        cond = make_cond(rng, n=4)
        f = rng.standard_normal((6, 8)).astype(np.float32)
        f2, att = cross_attend(f, cond, tensors)
        ref_f, ref_att = oracle_cross_attend(
            f.astype(np.float64), cond.embeddings.astype(np.float64),
            tensors["q.w"].astype(np.float64), tensors["k.w"].astype(np.float64),
            tensors["v.w"].astype(np.float64),
        )
        np.testing.assert_allclose(f2, ref_f, atol=1e-5)
        np.testing.assert_allclose(att, ref_att, atol=1e-5)

    def test_invalid_tokens_get_zero_attention(self, rng):
        tensors, config = make_params(rng)
        emb = rng.standard_normal((1, 4, 12)).astype(np.float32)
        token_mask = np.array([[1.0, 1.0, 0.0, 1.0]], dtype=np.float32)
        h = rng.standard_normal((1, 5, 10)).astype(np.float32)
        _, cache = moc_fwd(tensors, config, h, emb, token_mask, np.array([1]))
        att = cache[4]
        assert (att[0, :, 2] == 0).all()
        np.testing.assert_allclose(att[0].sum(axis=1), 1.0, atol=1e-5)

    def test_dim_mismatch(self, rng):
        tensors, _ = make_params(rng)
        with pytest.raises(DimensionMismatchError):
            cross_attend(np.zeros((4, 9), dtype=np.float32), make_cond(rng), tensors)


class TestAdaIn:
    def test_unit_scale_zero_shift_centers(self, rng):
        tensors, _ = make_params(rng)
        tensors["adain.w"][:] = 0.0
        tensors["adain.b"][:] = 0.0
        cond = make_cond(rng)
        f = rng.standard_normal((7, 8)).astype(np.float32) * 3 + 1.5
        out = ada_in(f, cond, tensors)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-2)

    def test_single_frame_finite(self, rng):
        tensors, _ = make_params(rng)
        out = ada_in(rng.standard_normal((1, 8)).astype(np.float32), make_cond(rng), tensors)
        assert np.isfinite(out).all()

    def test_matches_oracle(self, rng):
        tensors, _ = make_params(rng)
        cond = make_cond(rng)
        f = rng.standard_normal((6, 8)).astype(np.float32)
        out = ada_in(f, cond, tensors)
        ref = oracle_ada_in(
            f.astype(np.float64), cond.embeddings[cond.eos_index].astype(np.float64),
            tensors["adain.w"].astype(np.float64), tensors["adain.b"].astype(np.float64),
        )
        np.testing.assert_allclose(out, ref, atol=1e-5)


class TestExpertBlend:
    def test_pool_of_one(self, rng):
        config = MoCConfig(d_m=8, pool_size=1)
        tensors, _ = make_params(rng, config=config)
        e = blend_expert(tensors, rng.standard_normal(12).astype(np.float32))
        np.testing.assert_allclose(e["w0"], tensors["pool.w0"][0], atol=1e-6)
        np.testing.assert_allclose(e["omega"], [1.0])

    def test_one_hot_saturated_gate(self, rng):
        config = MoCConfig(d_m=8, pool_size=3)
        tensors, _ = make_params(rng, config=config)
        # force logits to a huge gap at expert 1 via the final gate layer
        tensors["gate.w2"][:] = 0.0
        tensors["gate.b2"][:] = np.array([0.0, 50.0, 0.0], dtype=np.float32)
        e = blend_expert(tensors, rng.standard_normal(12).astype(np.float32))
        np.testing.assert_allclose(e["w0"], tensors["pool.w0"][1], atol=1e-4)
        np.testing.assert_allclose(e["b1"], tensors["pool.b1"][1], atol=1e-4)

    def test_identical_pool_entries(self, rng):
        config = MoCConfig(d_m=8, pool_size=4)
        tensors, _ = make_params(rng, config=config)
        for key in ("w0", "b0", "w1", "b1"):
            tensors[f"pool.{key}"][:] = tensors[f"pool.{key}"][0]
        e = blend_expert(tensors, rng.standard_normal(12).astype(np.float32))
        np.testing.assert_allclose(e["w1"], tensors["pool.w1"][0], atol=1e-6)

    def test_gate_is_probability_vector(self, rng):
        tensors, _ = make_params(rng)
        for _ in range(10):
            e = blend_expert(tensors, rng.standard_normal(12).astype(np.float32))
            assert e["omega"].min() >= 0.0
            assert e["omega"].sum() == pytest.approx(1.0, abs=1e-6)

    def test_blend_is_convex(self, rng):
        tensors, _ = make_params(rng)
        e = blend_expert(tensors, rng.standard_normal(12).astype(np.float32))
        lo = tensors["pool.w0"].min(axis=0) - 1e-6
        hi = tensors["pool.w0"].max(axis=0) + 1e-6
        assert ((e["w0"] >= lo) & (e["w0"] <= hi)).all()

    def test_matches_oracle_gate(self, rng):
        tensors, _ = make_params(rng)
        emb = rng.standard_normal(12).astype(np.float32)
        e = blend_expert(tensors, emb)
        ref = oracle_gate(emb.astype(np.float64),
                          {k: v.astype(np.float64) for k, v in tensors.items()})
        np.testing.assert_allclose(e["omega"], ref, atol=1e-5)


class TestExpertForward:
    def test_zero_params_zero_output(self, rng):
        e = {"w0": np.zeros((8, 16)), "b0": np.zeros(16),
             "w1": np.zeros((16, 8)), "b1": np.zeros(8)}
        out = expert_forward(rng.standard_normal((5, 8)), e)
        np.testing.assert_array_equal(out, 0.0)

    def test_matches_oracle(self, rng):
        e = {"w0": rng.standard_normal((8, 16)), "b0": rng.standard_normal(16),
             "w1": rng.standard_normal((16, 8)), "b1": rng.standard_normal(8)}
        f = rng.standard_normal((5, 8))
        np.testing.assert_allclose(expert_forward(f, e), oracle_expert(f, e), atol=1e-5)

    def test_framewise_independence(self, rng):
        e = {"w0": rng.standard_normal((8, 16)), "b0": rng.standard_normal(16),
             "w1": rng.standard_normal((16, 8)), "b1": rng.standard_normal(8)}
        f = rng.standard_normal((6, 8))
        perm = rng.permutation(6)
        np.testing.assert_allclose(
            expert_forward(f[perm], e), expert_forward(f, e)[perm], atol=1e-12
        )


class TestAttentionMask:
    def test_threshold_point_is_half(self, rng):
        col = np.array([0.1, 0.2, 0.8])
        beta = 0.25
        col[0] = beta * col.max()  # exactly at the threshold
        m = attention_mask(col, gamma=24.0, beta=beta)
        assert m[0] == pytest.approx(0.5, abs=1e-12)

    def test_max_entry_saturation(self):
        col = np.array([0.3, 1.0, 0.05])
        m = attention_mask(col, gamma=24.0, beta=0.25)
        expected = 1.0 / (1.0 + np.exp(-18.0))
        assert m[1] == pytest.approx(expected, abs=1e-9)

    def test_uniform_column(self):
        col = np.full(7, 1.0 / 7)
        m = attention_mask(col, gamma=24.0, beta=0.25)
        assert np.allclose(m, m[0])

    def test_range_and_monotonicity(self, rng):
        col = np.sort(rng.uniform(0, 1, size=9))
        m = attention_mask(col, gamma=24.0, beta=0.25)
        assert (m > 0).all() and (m < 1).all()
        assert (np.diff(m) >= 0).all()


class TestMocForward:
    def test_zero_init_block_is_noop(self, rng):
        config = MoCConfig(d_m=8, pool_size=3)
        tensors = init_moc_params(10, 12, config, rng)
        cond = make_cond(rng)
        h = rng.standard_normal((5, 10)).astype(np.float32)
        out = moc_forward(h, cond, tensors, config)
        np.testing.assert_array_equal(out, 0.0)

    def test_no_zero_conv_init_is_not_noop(self, rng):
        config = MoCConfig(d_m=8, pool_size=3, use_zero_conv=False)
        tensors = init_moc_params(10, 12, config, rng)
        out = moc_forward(
            rng.standard_normal((5, 10)).astype(np.float32), make_cond(rng), tensors, config
        )
        assert np.abs(out).max() > 0

    def test_mask_ablation_switch(self, rng):
        base = MoCConfig(d_m=8, pool_size=3, gamma=4.0)
        tensors, _ = make_params(rng, config=base)
        cond = make_cond(rng)
        h = rng.standard_normal((5, 10)).astype(np.float32)
        off = MoCConfig(d_m=8, pool_size=3, gamma=4.0, use_attention_mask=False)
        out_off = moc_forward(h, cond, tensors, off)
        ref = oracle_moc_forward(h, cond.embeddings, cond.eos_index, tensors, off)
        np.testing.assert_allclose(out_off, ref, atol=1e-4)
        out_on = moc_forward(h, cond, tensors, base)
        assert np.abs(out_on - out_off).max() > 1e-6

    @pytest.mark.parametrize("trial", range(8))
    def test_matches_end_to_end_oracle(self, trial):
        # the spec-pinned tiny instance: l=4, n=2, d_m=8, K=3
        rng = np.random.default_rng(100 + trial)
        config = MoCConfig(d_m=8, pool_size=3, gamma=24.0, beta=0.25)
        tensors, _ = make_params(rng, d_model=10, d_c=12, config=config)
        cond = make_cond(rng, n=2)
        h = rng.standard_normal((4, 10)).astype(np.float32)
        out = moc_forward(h, cond, tensors, config)
        ref = oracle_moc_forward(h, cond.embeddings, cond.eos_index, tensors, config)
        np.testing.assert_allclose(out, ref, atol=1e-4)

    def test_plain_ffn_variant_runs(self, rng):
        config = MoCConfig(d_m=8, pool_size=3, experts_as_plain_ffn=True)
        tensors = init_moc_params(10, 12, config, rng)
        out = moc_forward(
            rng.standard_normal((5, 10)).astype(np.float32), make_cond(rng), tensors, config
        )
        np.testing.assert_array_equal(out, 0.0)  # zero up conv still applies
        tensors["up.w"] = rng.standard_normal(tensors["up.w"].shape).astype(np.float32)
        out = moc_forward(
            rng.standard_normal((5, 10)).astype(np.float32), make_cond(rng), tensors, config
        )
        assert np.abs(out).max() > 0
