"""Mixture-of-controllers conditioning block.

Motion features are down-projected, fused with text tokens through cross
attention (which also yields a frame-token attention map), normalized with
an adaptive instance norm driven by the end-of-sequence embedding, then
processed per token by a two-layer feed-forward controller whose
parameters are blended from a shared expert pool by a gating network.
Each token's output is gated by a sharpened attention mask and the summed
residual leaves through a zero-initialized up-projection, so a fresh block
is an exact no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatchError
from .text import TextConditioning

ADA_IN_EPS = 1e-5


@dataclass(frozen=True)
class MoCConfig:
    d_m: int = 256
    pool_size: int = 12
    gamma: float = 24.0
    beta: float = 0.25
    use_attention_mask: bool = True
    use_zero_conv: bool = True
    experts_as_plain_ffn: bool = False

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError(f"pool_size must be >= 1, got {self.pool_size}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def moc_param_shapes(d_model: int, d_c: int, config: MoCConfig) -> dict[str, tuple[int, ...]]:
    m, k = config.d_m, config.pool_size
    shapes: dict[str, tuple[int, ...]] = {
        "down.w": (d_model, m),
        "down.b": (m,),
        "q.w": (m, m),
        "k.w": (d_c, m),
        "v.w": (d_c, m),
        "up.w": (m, d_model),
        "up.b": (d_model,),
    }
    if config.experts_as_plain_ffn:
        shapes.update({
            "ffn.w0": (m, 2 * m),
            "ffn.b0": (2 * m,),
            "ffn.w1": (2 * m, m),
            "ffn.b1": (m,),
        })
        return shapes
    shapes.update({
        "adain.w": (d_c, 2 * m),
        "adain.b": (2 * m,),
        "gate.w0": (d_c, m),
        "gate.b0": (m,),
        "gate.w1": (m, m),
        "gate.b1": (m,),
        "gate.w2": (m, k),
        "gate.b2": (k,),
        "pool.w0": (k, m, 2 * m),
        "pool.b0": (k, 2 * m),
        "pool.w1": (k, 2 * m, m),
        "pool.b1": (k, m),
    })
    return shapes


def init_moc_params(
    d_model: int, d_c: int, config: MoCConfig, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Both projection convolutions start at zero (the block is a no-op and
    early gradient noise cannot reach the trainable copy); the no-zero-conv
    ablation swaps them for Gaussian-initialized layers."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape in moc_param_shapes(d_model, d_c, config).items():
        if name in ("up.w", "down.w"):
            if config.use_zero_conv:
                tensors[name] = np.zeros(shape, dtype=np.float32)
            else:
                # ablation: standard Gaussian conv init at 1/sqrt(fan_in)
                tensors[name] = nn.trunc_normal(rng, shape, std=1.0 / np.sqrt(shape[0]))
        elif name.split(".")[-1].startswith("b"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            # fan-in scaled so attention logits and gate activations start
            # at a trainable magnitude regardless of the conditioning dim
            fan_in = shape[0] if len(shape) == 2 else shape[1]
            tensors[name] = nn.trunc_normal(rng, shape, std=1.0 / np.sqrt(fan_in))
    return tensors


# ---------------------------------------------------------------------------
# cross attention between motion frames (queries) and text tokens (keys)

def _cross_attend_fwd(p, f, emb, token_mask):
    d_m = f.shape[-1]
    q = f @ p["q.w"]
    k = emb @ p["k.w"]
    v = emb @ p["v.w"]
    scale = f.dtype.type(1.0 / np.sqrt(d_m))
    logits = (q @ k.swapaxes(-1, -2)) * scale
    att = nn.masked_softmax(logits, token_mask[:, None, :])
    f_out = f + att @ v
    cache = (f, emb, q, k, v, att, scale)
    return f_out, att, cache


def _cross_attend_bwd(p, grads, prefix, cache, df_out, datt_extra):
    f, emb, q, k, v, att, scale = cache
    datt = df_out @ v.swapaxes(-1, -2)
    if datt_extra is not None:
        datt = datt + datt_extra
    dv = att.swapaxes(-1, -2) @ df_out
    dlogits = nn.softmax_bwd(datt, att)
    dq = (dlogits @ k) * scale
    dk = (dlogits.swapaxes(-1, -2) @ q) * scale
    df = df_out + dq @ p["q.w"].T
    nn.accumulate(grads, f"{prefix}q.w", f.reshape(-1, f.shape[-1]).T @ dq.reshape(-1, dq.shape[-1]))
    e2 = emb.reshape(-1, emb.shape[-1])
    nn.accumulate(grads, f"{prefix}k.w", e2.T @ dk.reshape(-1, dk.shape[-1]))
    nn.accumulate(grads, f"{prefix}v.w", e2.T @ dv.reshape(-1, dv.shape[-1]))
    return df


# ---------------------------------------------------------------------------
# adaptive instance norm over the temporal axis, conditioned on <eos>

def _ada_in_fwd(p, f, eos_emb, frame_mask):
    m = frame_mask[:, :, None]
    n_valid = m.sum(axis=1, keepdims=True)
    mu = (f * m).sum(axis=1, keepdims=True) / n_valid
    xc = f - mu
    var = ((xc * xc) * m).sum(axis=1, keepdims=True) / n_valid
    inv = 1.0 / np.sqrt(var + ADA_IN_EPS)
    norm = xc * inv
    affine = eos_emb @ p["adain.w"] + p["adain.b"]
    d_m = f.shape[-1]
    ds = affine[:, :d_m][:, None, :]
    shift = affine[:, d_m:][:, None, :]
    y = norm * (1.0 + ds) + shift
    cache = (eos_emb, norm, inv, ds, m, n_valid)
    return y, cache


def _ada_in_bwd(p, grads, prefix, cache, dy):
    eos_emb, norm, inv, ds, m, n_valid = cache
    dds = (dy * norm).sum(axis=1)
    dshift = dy.sum(axis=1)
    daffine = np.concatenate([dds, dshift], axis=-1)
    nn.accumulate(grads, f"{prefix}adain.w", eos_emb.T @ daffine)
    nn.accumulate(grads, f"{prefix}adain.b", daffine.sum(axis=0))
    dnorm = dy * (1.0 + ds)
    # stats use valid frames only, but every frame's normalized value can
    # carry downstream gradient, so the coupling sums run over all frames
    s1 = dnorm.sum(axis=1, keepdims=True) / n_valid
    s2 = (dnorm * norm).sum(axis=1, keepdims=True) / n_valid
    df = inv * (dnorm - m * (s1 + norm * s2))
    deos = daffine @ p["adain.w"].T
    return df, deos


# ---------------------------------------------------------------------------
# gating network and expert blending

def _gating_fwd(p, emb):
    g0 = emb @ p["gate.w0"] + p["gate.b0"]
    a0 = nn.gelu(g0)
    g1 = a0 @ p["gate.w1"] + p["gate.b1"]
    a1 = nn.gelu(g1)
    logits = a1 @ p["gate.w2"] + p["gate.b2"]
    omega = nn.softmax(logits, axis=-1)
    cache = (emb, g0, a0, g1, a1)
    return omega, cache


def _gating_bwd(p, grads, prefix, cache, domega, omega):
    emb, g0, a0, g1, a1 = cache
    dlogits = nn.softmax_bwd(domega, omega)
    flat = lambda x: x.reshape(-1, x.shape[-1])
    nn.accumulate(grads, f"{prefix}gate.w2", flat(a1).T @ flat(dlogits))
    nn.accumulate(grads, f"{prefix}gate.b2", flat(dlogits).sum(axis=0))
    da1 = dlogits @ p["gate.w2"].T
    dg1 = nn.gelu_bwd(da1, g1)
    nn.accumulate(grads, f"{prefix}gate.w1", flat(a0).T @ flat(dg1))
    nn.accumulate(grads, f"{prefix}gate.b1", flat(dg1).sum(axis=0))
    da0 = dg1 @ p["gate.w1"].T
    dg0 = nn.gelu_bwd(da0, g0)
    nn.accumulate(grads, f"{prefix}gate.w0", flat(emb).T @ flat(dg0))
    nn.accumulate(grads, f"{prefix}gate.b0", flat(dg0).sum(axis=0))


def _blend_fwd(p, omega):
    w0 = np.einsum("bnk,kio->bnio", omega, p["pool.w0"])
    b0 = np.einsum("bnk,ko->bno", omega, p["pool.b0"])
    w1 = np.einsum("bnk,koi->bnoi", omega, p["pool.w1"])
    b1 = np.einsum("bnk,ki->bni", omega, p["pool.b1"])
    return w0, b0, w1, b1


def _expert_fwd(blended, y):
    w0, b0, w1, b1 = blended
    z0 = np.einsum("bli,bnio->bnlo", y, w0) + b0[:, :, None, :]
    h = nn.gelu(z0)
    u = np.einsum("bnlo,bnoi->bnli", h, w1) + b1[:, :, None, :]
    return u, (z0, h)


def _expert_bwd(p, grads, prefix, blended, expert_cache, y, omega, du):
    w0, b0, w1, b1 = blended
    z0, h = expert_cache
    dw1 = np.einsum("bnlo,bnli->bnoi", h, du)
    db1 = du.sum(axis=2)
    dh = np.einsum("bnli,bnoi->bnlo", du, w1)
    dz0 = nn.gelu_bwd(dh, z0)
    dw0 = np.einsum("bli,bnlo->bnio", y, dz0)
    db0 = dz0.sum(axis=2)
    dy = np.einsum("bnlo,bnio->bli", dz0, w0)
    nn.accumulate(grads, f"{prefix}pool.w0", np.einsum("bnk,bnio->kio", omega, dw0))
    nn.accumulate(grads, f"{prefix}pool.b0", np.einsum("bnk,bno->ko", omega, db0))
    nn.accumulate(grads, f"{prefix}pool.w1", np.einsum("bnk,bnoi->koi", omega, dw1))
    nn.accumulate(grads, f"{prefix}pool.b1", np.einsum("bnk,bni->ki", omega, db1))
    domega = (
        np.einsum("bnio,kio->bnk", dw0, p["pool.w0"])
        + np.einsum("bno,ko->bnk", db0, p["pool.b0"])
        + np.einsum("bnoi,koi->bnk", dw1, p["pool.w1"])
        + np.einsum("bni,ki->bnk", db1, p["pool.b1"])
    )
    return dy, domega


# ---------------------------------------------------------------------------
# sharpened attention mask

def _attention_mask_fwd(att, frame_mask, gamma, beta):
    neg = np.array(-np.inf, dtype=att.dtype)
    masked = np.where(frame_mask[:, :, None] > 0, att, neg)
    argmax = masked.argmax(axis=1)  # (B, n)
    amax = np.take_along_axis(att, argmax[:, None, :], axis=1)
    z = gamma * (att - beta * amax)
    m_col = nn.sigmoid(z)
    return m_col, (m_col, argmax)


def _attention_mask_bwd(cache, dm, gamma, beta):
    m_col, argmax = cache
    dz = dm * m_col * (1.0 - m_col)
    datt = gamma * dz
    damax = (-gamma * beta) * dz.sum(axis=1, keepdims=True)
    b_idx = np.arange(datt.shape[0])[:, None]
    n_idx = np.arange(datt.shape[2])[None, :]
    contrib = np.zeros_like(datt)
    contrib[b_idx, argmax, n_idx] = damax[:, 0, :]
    return datt + contrib


# ---------------------------------------------------------------------------
# full block

def moc_fwd(
    tensors: dict[str, np.ndarray],
    config: MoCConfig,
    h: np.ndarray,
    emb: np.ndarray,
    token_mask: np.ndarray,
    eos_index: np.ndarray,
    frame_mask: np.ndarray | None = None,
    prefix: str = "",
):
    """Forward pass over a batch; returns (residual, cache).

    h: (B, l, d_model); emb: (B, n, d_c); masks are validity indicators.
    """
    p = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)} if prefix else tensors
    B, l, _ = h.shape
    if frame_mask is None:
        frame_mask = np.ones((B, l), dtype=h.dtype)
    f = h @ p["down.w"] + p["down.b"]
    f_att, att, att_cache = _cross_attend_fwd(p, f, emb, token_mask)

    if config.experts_as_plain_ffn:
        z0 = f_att @ p["ffn.w0"] + p["ffn.b0"]
        hz = nn.gelu(z0)
        r = hz @ p["ffn.w1"] + p["ffn.b1"]
        out = r @ p["up.w"] + p["up.b"]
        cache = ("ffn", h, frame_mask, att_cache, f_att, z0, hz, r)
        return out, cache

    eos_emb = np.take_along_axis(emb, eos_index[:, None, None], axis=1)[:, 0, :]
    y, ada_cache = _ada_in_fwd(p, f_att, eos_emb, frame_mask)
    omega, gate_cache = _gating_fwd(p, emb)
    blended = _blend_fwd(p, omega)
    u, expert_cache = _expert_fwd(blended, y)
    if config.use_attention_mask:
        m_col, mask_cache = _attention_mask_fwd(att, frame_mask, config.gamma, config.beta)
        gated = u * m_col.transpose(0, 2, 1)[:, :, :, None]
    else:
        m_col, mask_cache = None, None
        gated = u
    r = (gated * token_mask[:, :, None, None]).sum(axis=1)
    out = r @ p["up.w"] + p["up.b"]
    cache = (
        "full", h, frame_mask, att_cache, att, eos_index, y, ada_cache, omega,
        gate_cache, blended, expert_cache, u, m_col, mask_cache, token_mask, r,
    )
    return out, cache


def moc_bwd(
    tensors: dict[str, np.ndarray],
    config: MoCConfig,
    cache,
    dout: np.ndarray,
    prefix: str = "",
):
    """Gradients of moc_fwd; returns (param grads with `prefix`, dh)."""
    p = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)} if prefix else tensors
    grads: dict[str, np.ndarray] = {}
    kind = cache[0]

    if kind == "ffn":
        _, h, frame_mask, att_cache, f_att, z0, hz, r = cache
        flat = lambda x: x.reshape(-1, x.shape[-1])
        nn.accumulate(grads, f"{prefix}up.w", flat(r).T @ flat(dout))
        nn.accumulate(grads, f"{prefix}up.b", flat(dout).sum(axis=0))
        dr = dout @ p["up.w"].T
        nn.accumulate(grads, f"{prefix}ffn.w1", flat(hz).T @ flat(dr))
        nn.accumulate(grads, f"{prefix}ffn.b1", flat(dr).sum(axis=0))
        dhz = dr @ p["ffn.w1"].T
        dz0 = nn.gelu_bwd(dhz, z0)
        nn.accumulate(grads, f"{prefix}ffn.w0", flat(f_att).T @ flat(dz0))
        nn.accumulate(grads, f"{prefix}ffn.b0", flat(dz0).sum(axis=0))
        df_att = dz0 @ p["ffn.w0"].T
        df = _cross_attend_bwd(p, grads, prefix, att_cache, df_att, None)
        nn.accumulate(grads, f"{prefix}down.w", flat(h).T @ flat(df))
        nn.accumulate(grads, f"{prefix}down.b", flat(df).sum(axis=0))
        dh = df @ p["down.w"].T
        return grads, dh

    (_, h, frame_mask, att_cache, att, eos_index, y, ada_cache, omega,
     gate_cache, blended, expert_cache, u, m_col, mask_cache, token_mask, r) = cache
    flat = lambda x: x.reshape(-1, x.shape[-1])
    nn.accumulate(grads, f"{prefix}up.w", flat(r).T @ flat(dout))
    nn.accumulate(grads, f"{prefix}up.b", flat(dout).sum(axis=0))
    dr = dout @ p["up.w"].T
    dgated = dr[:, None, :, :] * token_mask[:, :, None, None]
    datt_extra = None
    if config.use_attention_mask:
        du = dgated * m_col.transpose(0, 2, 1)[:, :, :, None]
        dm_col = (dgated * u).sum(axis=3).transpose(0, 2, 1)
        datt_extra = _attention_mask_bwd(mask_cache, dm_col, config.gamma, config.beta)
    else:
        du = dgated
    dy, domega = _expert_bwd(p, grads, prefix, blended, expert_cache, y, omega, du)
    _gating_bwd(p, grads, prefix, gate_cache, domega, omega)
    df_att, deos = _ada_in_bwd(p, grads, prefix, ada_cache, dy)
    df = _cross_attend_bwd(p, grads, prefix, att_cache, df_att, datt_extra)
    nn.accumulate(grads, f"{prefix}down.w", flat(h).T @ flat(df))
    nn.accumulate(grads, f"{prefix}down.b", flat(df).sum(axis=0))
    dh = df @ p["down.w"].T
    return grads, dh


# ---------------------------------------------------------------------------
# single-sample operations mirroring the batch internals

def _as_batch(cond: TextConditioning, dtype):
    cond.validate()
    return (
        cond.embeddings.astype(dtype)[None],
        cond.token_mask.astype(dtype)[None],
        np.asarray([cond.eos_index], dtype=np.int64),
    )


def cross_attend(
    f: np.ndarray, cond: TextConditioning, tensors: dict[str, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Residual attention update of frame features against text tokens.

    Returns the updated features and the frame-token attention map whose
    rows sum to one over valid tokens.
    """
    if f.ndim != 2 or f.shape[1] != tensors["q.w"].shape[0]:
        raise DimensionMismatchError(
            f"f must be (l, {tensors['q.w'].shape[0]}), got {f.shape}"
        )
    if cond.embeddings.shape[1] != tensors["k.w"].shape[0]:
        raise DimensionMismatchError(
            f"conditioning dim {cond.embeddings.shape[1]} != {tensors['k.w'].shape[0]}"
        )
    emb, token_mask, _ = _as_batch(cond, f.dtype)
    f_out, att, _ = _cross_attend_fwd(tensors, f[None], emb, token_mask)
    return f_out[0], att[0]


def ada_in(
    f_prime: np.ndarray, cond: TextConditioning, tensors: dict[str, np.ndarray]
) -> np.ndarray:
    """Temporal instance norm followed by a scale/shift predicted from <eos>."""
    emb, _, eos_index = _as_batch(cond, f_prime.dtype)
    eos_emb = emb[0, eos_index[0]][None]
    frame_mask = np.ones((1, f_prime.shape[0]), dtype=f_prime.dtype)
    y, _ = _ada_in_fwd(tensors, f_prime[None], eos_emb, frame_mask)
    return y[0]


def blend_expert(
    tensors: dict[str, np.ndarray], token_embedding: np.ndarray
) -> dict[str, np.ndarray]:
    """Convex combination of the expert pool selected by the gating network."""
    omega, _ = _gating_fwd(tensors, token_embedding[None, None, :])
    w0, b0, w1, b1 = _blend_fwd(tensors, omega)
    return {"w0": w0[0, 0], "b0": b0[0, 0], "w1": w1[0, 0], "b1": b1[0, 0],
            "omega": omega[0, 0]}


def expert_forward(f_prime: np.ndarray, expert: dict[str, np.ndarray]) -> np.ndarray:
    """Two-layer feed-forward controller applied frame-wise."""
    return nn.gelu(f_prime @ expert["w0"] + expert["b0"]) @ expert["w1"] + expert["b1"]


def attention_mask(column: np.ndarray, gamma: float, beta: float) -> np.ndarray:
    """Sigmoid sharpening of one attention column against its max."""
    return nn.sigmoid(gamma * (column - beta * column.max()))


def moc_forward(
    h: np.ndarray,
    cond: TextConditioning,
    tensors: dict[str, np.ndarray],
    config: MoCConfig,
) -> np.ndarray:
    """Residual sum over per-token controllers for one sequence."""
    emb, token_mask, eos_index = _as_batch(cond, h.dtype)
    out, _ = moc_fwd(tensors, config, h[None], emb, token_mask, eos_index)
    return out[0]
