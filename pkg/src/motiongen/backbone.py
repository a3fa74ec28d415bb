"""Transformer denoiser: rotary attention, timestep-modulated layer norm,
and hand-written gradients.

The network predicts the clean motion from a noised input.  Each block is
modulated by shift/scale/gate vectors computed from the timestep embedding
through zero-initialized linear maps, so a freshly initialized block's
residual branches contribute nothing.  The modulation pathway is kept at a
third of the model width, which lands the preset parameter budgets close
to their published sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import (
    LengthExceededError,
    NonFiniteActivationError,
    ShapeMismatchError,
)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_head: int
    input_dim: int = 59
    max_len: int = 300

    def __post_init__(self):
        if self.n_heads * self.d_head != self.d_model:
            raise ShapeMismatchError(
                f"n_heads*d_head = {self.n_heads * self.d_head} != d_model {self.d_model}"
            )

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model

    @property
    def cond_dim(self) -> int:
        return max(8, self.d_model // 3)


PRESETS: dict[str, tuple[int, int, int, int]] = {
    "tiny": (2, 64, 4, 16),
    "base": (8, 1024, 8, 128),
    "large": (12, 1280, 10, 128),
    "huge": (16, 1664, 13, 128),
    "giant": (24, 2048, 16, 128),
}

PRESET_PARAM_TARGETS = {
    "base": 88e6,
    "large": 201e6,
    "huge": 405e6,
    "giant": 1e9,
}


def preset_config(name: str, input_dim: int = 59, max_len: int = 300) -> ModelConfig:
    n_layers, d_model, n_heads, d_head = PRESETS[name]
    return ModelConfig(n_layers, d_model, n_heads, d_head, input_dim, max_len)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, c, f = config.d_model, config.cond_dim, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "in_proj.w": (config.input_dim, d),
        "in_proj.b": (d,),
        "t_embed.w1": (nn.SINUSOID_DIM, c),
        "t_embed.b1": (c,),
        "t_embed.w2": (c, c),
        "t_embed.b2": (c,),
    }
    for i in range(config.n_layers):
        pre = f"blocks.{i}"
        shapes[f"{pre}.attn.qkv_w"] = (d, 3 * d)
        shapes[f"{pre}.attn.qkv_b"] = (3 * d,)
        shapes[f"{pre}.attn.out_w"] = (d, d)
        shapes[f"{pre}.attn.out_b"] = (d,)
        shapes[f"{pre}.ffn.w1"] = (d, f)
        shapes[f"{pre}.ffn.b1"] = (f,)
        shapes[f"{pre}.ffn.w2"] = (f, d)
        shapes[f"{pre}.ffn.b2"] = (d,)
        shapes[f"{pre}.mod.w"] = (c, 6 * d)
        shapes[f"{pre}.mod.b"] = (6 * d,)
    shapes["final.mod.w"] = (c, 2 * d)
    shapes["final.mod.b"] = (2 * d,)
    shapes["out_proj.w"] = (d, config.input_dim)
    shapes["out_proj.b"] = (config.input_dim,)
    return shapes


def count_params(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


_ZERO_INIT_SUFFIXES = ("mod.w", "mod.b")


@dataclass
class DenoiserParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(config: ModelConfig, rng: np.random.Generator) -> DenoiserParams:
    """Truncated-normal projections (std 0.02); modulation layers start at zero."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(_ZERO_INIT_SUFFIXES) or name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            tensors[name] = nn.trunc_normal(rng, shape)
    return DenoiserParams(config=config, tensors=tensors)


# ---------------------------------------------------------------------------
# attention block

def _attn_fwd(p, pre, x, key_mask, cos, sin, n_heads):
    B, L, d = x.shape
    dh = d // n_heads
    qkv = nn.linear(x, p[f"{pre}.qkv_w"], p[f"{pre}.qkv_b"])
    qkv = qkv.reshape(B, L, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    qr = nn.apply_rope(q, cos, sin)
    kr = nn.apply_rope(k, cos, sin)
    scale = x.dtype.type(1.0 / np.sqrt(dh))
    logits = (qr @ kr.swapaxes(-1, -2)) * scale
    if key_mask is not None:
        valid = key_mask[:, None, None, :]
        att = nn.masked_softmax(logits, valid)
    else:
        att = nn.softmax(logits)
    ctx = att @ v
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, L, d)
    out = nn.linear(merged, p[f"{pre}.out_w"], p[f"{pre}.out_b"])
    cache = (x, qr, kr, v, att, merged, cos, sin, scale, n_heads)
    return out, cache


def _attn_bwd(p, pre, dout, cache, grads):
    x, qr, kr, v, att, merged, cos, sin, scale, n_heads = cache
    B, L, d = x.shape
    dh = d // n_heads
    dmerged, dw, db = nn.linear_bwd(dout, merged, p[f"{pre}.out_w"])
    nn.accumulate(grads, f"{pre}.out_w", dw)
    nn.accumulate(grads, f"{pre}.out_b", db)
    dctx = dmerged.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
    datt = dctx @ v.swapaxes(-1, -2)
    dv = att.swapaxes(-1, -2) @ dctx
    dlogits = nn.softmax_bwd(datt, att)
    dqr = (dlogits @ kr) * scale
    dkr = (dlogits.swapaxes(-1, -2) @ qr) * scale
    dq = nn.apply_rope_bwd(dqr, cos, sin)
    dk = nn.apply_rope_bwd(dkr, cos, sin)
    dqkv = np.stack([dq, dk, dv], axis=0).transpose(1, 3, 0, 2, 4).reshape(B, L, 3 * d)
    dx, dw, db = nn.linear_bwd(dqkv, x, p[f"{pre}.qkv_w"])
    nn.accumulate(grads, f"{pre}.qkv_w", dw)
    nn.accumulate(grads, f"{pre}.qkv_b", db)
    return dx


# ---------------------------------------------------------------------------
# transformer block with timestep modulation

def _block_fwd(p, pre, h, mod_in, key_mask, cos, sin, n_heads):
    mod = nn.linear(mod_in, p[f"{pre}.mod.w"], p[f"{pre}.mod.b"])
    d = h.shape[-1]
    parts = [mod[:, i * d : (i + 1) * d][:, None, :] for i in range(6)]
    shift1, scale1, gate1, shift2, scale2, gate2 = parts
    n1, inv1 = nn.layer_norm(h)
    m1 = n1 * (1.0 + scale1) + shift1
    attn_out, attn_cache = _attn_fwd(p, f"{pre}.attn", m1, key_mask, cos, sin, n_heads)
    h1 = h + gate1 * attn_out
    n2, inv2 = nn.layer_norm(h1)
    m2 = n2 * (1.0 + scale2) + shift2
    f1 = nn.linear(m2, p[f"{pre}.ffn.w1"], p[f"{pre}.ffn.b1"])
    g = nn.gelu(f1)
    f2 = nn.linear(g, p[f"{pre}.ffn.w2"], p[f"{pre}.ffn.b2"])
    h2 = h1 + gate2 * f2
    cache = (mod_in, parts, n1, inv1, attn_out, attn_cache, h1, n2, inv2, m2, f1, g, f2)
    return h2, cache


def _block_bwd(p, pre, dh2, cache, grads):
    (mod_in, parts, n1, inv1, attn_out, attn_cache, h1, n2, inv2, m2, f1, g, f2) = cache
    shift1, scale1, gate1, shift2, scale2, gate2 = parts
    d = n1.shape[-1]

    dgate2 = (dh2 * f2).sum(axis=1)
    df2 = dh2 * gate2
    dh1 = dh2.copy()
    dg, dw, db = nn.linear_bwd(df2, g, p[f"{pre}.ffn.w2"])
    nn.accumulate(grads, f"{pre}.ffn.w2", dw)
    nn.accumulate(grads, f"{pre}.ffn.b2", db)
    df1 = nn.gelu_bwd(dg, f1)
    dm2, dw, db = nn.linear_bwd(df1, m2, p[f"{pre}.ffn.w1"])
    nn.accumulate(grads, f"{pre}.ffn.w1", dw)
    nn.accumulate(grads, f"{pre}.ffn.b1", db)
    dscale2 = (dm2 * n2).sum(axis=1)
    dshift2 = dm2.sum(axis=1)
    dn2 = dm2 * (1.0 + scale2)
    dh1 += nn.layer_norm_bwd(dn2, n2, inv2)

    dgate1 = (dh1 * attn_out).sum(axis=1)
    dattn = dh1 * gate1
    dh = dh1.copy()
    dm1 = _attn_bwd(p, f"{pre}.attn", dattn, attn_cache, grads)
    dscale1 = (dm1 * n1).sum(axis=1)
    dshift1 = dm1.sum(axis=1)
    dn1 = dm1 * (1.0 + scale1)
    dh += nn.layer_norm_bwd(dn1, n1, inv1)

    dmod = np.concatenate(
        [dshift1, dscale1, dgate1, dshift2, dscale2, dgate2], axis=-1
    )
    dmod_in, dw, db = nn.linear_bwd(dmod, mod_in, p[f"{pre}.mod.w"])
    nn.accumulate(grads, f"{pre}.mod.w", dw)
    nn.accumulate(grads, f"{pre}.mod.b", db)
    return dh, dmod_in


# ---------------------------------------------------------------------------
# timestep pathway

def _t_embed_fwd(p, t, dtype):
    sinus = nn.timestep_sinusoid(t, dtype=dtype)
    a = nn.linear(sinus, p["t_embed.w1"], p["t_embed.b1"])
    sa = nn.silu(a)
    t_emb = nn.linear(sa, p["t_embed.w2"], p["t_embed.b2"])
    mod_in = nn.silu(t_emb)
    cache = (sinus, a, sa, t_emb)
    return mod_in, cache


def _t_embed_bwd(p, dmod_in, cache, grads):
    sinus, a, sa, t_emb = cache
    dt_emb = nn.silu_bwd(dmod_in, t_emb)
    dsa, dw, db = nn.linear_bwd(dt_emb, sa, p["t_embed.w2"])
    nn.accumulate(grads, "t_embed.w2", dw)
    nn.accumulate(grads, "t_embed.b2", db)
    da = nn.silu_bwd(dsa, a)
    _, dw, db = nn.linear_bwd(da, sinus, p["t_embed.w1"])
    nn.accumulate(grads, "t_embed.w1", dw)
    nn.accumulate(grads, "t_embed.b1", db)


# ---------------------------------------------------------------------------
# full denoiser

def denoise_fwd(
    tensors: dict[str, np.ndarray],
    config: ModelConfig,
    x_t: np.ndarray,
    t: np.ndarray,
    mask: np.ndarray | None = None,
):
    """Forward pass; returns (x0_hat, cache).  Padded key positions are
    excluded from attention so valid outputs are padding-invariant."""
    if x_t.ndim != 3 or x_t.shape[-1] != config.input_dim:
        raise ShapeMismatchError(f"x_t must be (B, L, {config.input_dim}), got {x_t.shape}")
    B, L, _ = x_t.shape
    if L > config.max_len:
        raise LengthExceededError(f"len {L} exceeds max_len {config.max_len}")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64).reshape(-1), (B,))
    dtype = x_t.dtype
    mod_in, t_cache = _t_embed_fwd(tensors, t, dtype)
    h = nn.linear(x_t, tensors["in_proj.w"], tensors["in_proj.b"])
    cos, sin = nn.rope_tables(np.arange(L), config.d_head, dtype=dtype)
    block_caches = []
    for i in range(config.n_layers):
        h, cache = _block_fwd(
            tensors, f"blocks.{i}", h, mod_in, mask, cos, sin, config.n_heads
        )
        block_caches.append(cache)
    nf, invf = nn.layer_norm(h)
    modf = nn.linear(mod_in, tensors["final.mod.w"], tensors["final.mod.b"])
    d = config.d_model
    shift_f = modf[:, :d][:, None, :]
    scale_f = modf[:, d:][:, None, :]
    mf = nf * (1.0 + scale_f) + shift_f
    y = nn.linear(mf, tensors["out_proj.w"], tensors["out_proj.b"])
    if not np.isfinite(y).all():
        raise NonFiniteActivationError("denoiser produced non-finite output")
    cache = (x_t, t_cache, mod_in, block_caches, nf, invf, shift_f, scale_f, mf, mask)
    return y, cache


def denoise_bwd(
    tensors: dict[str, np.ndarray],
    config: ModelConfig,
    cache,
    dy: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the forward pass; returns (param grads, dx)."""
    (x_t, t_cache, mod_in, block_caches, nf, invf, shift_f, scale_f, mf, mask) = cache
    grads: dict[str, np.ndarray] = {}
    dmf, dw, db = nn.linear_bwd(dy, mf, tensors["out_proj.w"])
    nn.accumulate(grads, "out_proj.w", dw)
    nn.accumulate(grads, "out_proj.b", db)
    dscale_f = (dmf * nf).sum(axis=1)
    dshift_f = dmf.sum(axis=1)
    dnf = dmf * (1.0 + scale_f)
    dh = nn.layer_norm_bwd(dnf, nf, invf)
    dmodf = np.concatenate([dshift_f, dscale_f], axis=-1)
    dmod_in, dw, db = nn.linear_bwd(dmodf, mod_in, tensors["final.mod.w"])
    nn.accumulate(grads, "final.mod.w", dw)
    nn.accumulate(grads, "final.mod.b", db)
    for i in reversed(range(config.n_layers)):
        dh, dmod_i = _block_bwd(tensors, f"blocks.{i}", dh, block_caches[i], grads)
        dmod_in += dmod_i
    dx, dw, db = nn.linear_bwd(dh, x_t, tensors["in_proj.w"])
    nn.accumulate(grads, "in_proj.w", dw)
    nn.accumulate(grads, "in_proj.b", db)
    _t_embed_bwd(tensors, dmod_in, t_cache, grads)
    return grads, dx


def denoise(
    params: DenoiserParams,
    x_t: np.ndarray,
    t: np.ndarray | int,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Predict clean motion; inference-only wrapper around denoise_fwd."""
    y, _ = denoise_fwd(params.tensors, params.config, x_t, t, mask)
    return y
