"""Numpy neural-net primitives with hand-written backward passes.

Every forward returns what its backward needs; dtypes follow the inputs, so
tests can run the exact same code in float64.  Parameters live in flat
dicts keyed by dotted names, which keeps checkpoint serialization and
optimizer state trivial.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import OddHeadDimError

SINUSOID_DIM = 256


# ---------------------------------------------------------------------------
# initializers / parameter-dict helpers

def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.standard_normal(shape) * std
    return np.clip(x, -2 * std, 2 * std).astype(np.float32)


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def accumulate(grads: dict[str, np.ndarray], key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


# ---------------------------------------------------------------------------
# elementwise activations

def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_bwd(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return dy * s * (1.0 + x * (1.0 - s))


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_bwd(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


# ---------------------------------------------------------------------------
# linear / layer norm / softmax

def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = x @ w
    if b is not None:
        y = y + b
    return y


def linear_bwd(
    dy: np.ndarray, x: np.ndarray, w: np.ndarray, with_bias: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0) if with_bias else None
    return dx, dw, db


LN_EPS = 1e-6


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    return y, inv


def layer_norm_bwd(dy: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    m1 = dy.mean(axis=-1, keepdims=True)
    m2 = (dy * y).mean(axis=-1, keepdims=True)
    return inv * (dy - m1 - y * m2)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax(z: np.ndarray, valid: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax over positions where `valid` is nonzero; others get weight 0."""
    neg = np.array(-np.inf, dtype=z.dtype)
    zm = np.where(valid > 0, z, neg)
    return softmax(zm, axis=axis)


def softmax_bwd(dp: np.ndarray, p: np.ndarray, axis: int = -1) -> np.ndarray:
    inner = (dp * p).sum(axis=axis, keepdims=True)
    return p * (dp - inner)


# ---------------------------------------------------------------------------
# rotary positional embedding (half-split convention)

def rope_tables(positions: np.ndarray, d_head: int, dtype=np.float32):
    """cos/sin tables of shape (len, d_head) for the given frame positions."""
    if d_head % 2 != 0:
        raise OddHeadDimError(f"d_head must be even, got {d_head}")
    half = d_head // 2
    inv_freq = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) / half))
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.concatenate([np.cos(angles), np.cos(angles)], axis=-1).astype(dtype)
    sin = np.concatenate([np.sin(angles), np.sin(angles)], axis=-1).astype(dtype)
    return cos, sin


def _rotate_half(x: np.ndarray) -> np.ndarray:
    half = x.shape[-1] // 2
    return np.concatenate([-x[..., half:], x[..., :half]], axis=-1)


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """x shaped (..., len, d_head)."""
    return x * cos + _rotate_half(x) * sin


def apply_rope_bwd(dy: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # adjoint of the rotation: R^T(u) = [u2, -u1]
    half = dy.shape[-1] // 2
    ds = dy * sin
    return dy * cos + np.concatenate([ds[..., half:], -ds[..., :half]], axis=-1)


def rotary_scores(q: np.ndarray, k: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Attention logits q~ . k~^T / sqrt(d_head) after per-position rotation.

    q, k shaped (..., len, d_head); logits depend only on position differences.
    """
    if q.shape != k.shape:
        raise ValueError(f"q shape {q.shape} != k shape {k.shape}")
    cos, sin = rope_tables(positions, q.shape[-1], dtype=q.dtype)
    qr = apply_rope(q, cos, sin)
    kr = apply_rope(k, cos, sin)
    scale = 1.0 / np.sqrt(q.shape[-1])
    return np.einsum("...id,...jd->...ij", qr, kr) * q.dtype.type(scale)


# ---------------------------------------------------------------------------
# timestep embedding

def timestep_sinusoid(t: np.ndarray, dim: int = SINUSOID_DIM, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, (B, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1).astype(dtype)
