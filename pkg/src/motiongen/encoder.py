"""Contrastive motion encoder: temporal-pooling MLP trained with symmetric
InfoNCE against end-of-sequence text embeddings, so motion features land in
the same space as the text features used for scoring and retrieval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import MotionSequence
from .text import EMBED_DIM


@dataclass
class EncoderConfig:
    input_dim: int
    hidden: int = 128
    out_dim: int = EMBED_DIM
    temperature: float = 0.07
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "w1": nn.trunc_normal(rng, (config.input_dim, config.hidden), std=0.05),
        "b1": np.zeros(config.hidden, dtype=np.float32),
        "w2": nn.trunc_normal(rng, (config.hidden, config.hidden), std=0.05),
        "b2": np.zeros(config.hidden, dtype=np.float32),
        "w3": nn.trunc_normal(rng, (config.hidden, config.out_dim), std=0.05),
        "b3": np.zeros(config.out_dim, dtype=np.float32),
    }


def encode_fwd(p, x: np.ndarray, mask: np.ndarray):
    """x: (B, L, D) padded batch; mask: (B, L).  Returns (z, cache)."""
    a1 = x @ p["w1"] + p["b1"]
    h1 = nn.gelu(a1)
    m = mask[:, :, None]
    n_valid = m.sum(axis=1)
    pooled = (h1 * m).sum(axis=1) / n_valid
    a2 = pooled @ p["w2"] + p["b2"]
    h2 = nn.gelu(a2)
    z = h2 @ p["w3"] + p["b3"]
    cache = (x, a1, m, n_valid, pooled, a2, h2)
    return z, cache


def encode_bwd(p, cache, dz):
    x, a1, m, n_valid, pooled, a2, h2 = cache
    grads = {}
    grads["w3"] = h2.T @ dz
    grads["b3"] = dz.sum(axis=0)
    dh2 = dz @ p["w3"].T
    da2 = nn.gelu_bwd(dh2, a2)
    grads["w2"] = pooled.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dpooled = da2 @ p["w2"].T
    dh1 = (dpooled / n_valid)[:, None, :] * m
    da1 = nn.gelu_bwd(dh1, a1)
    grads["w1"] = x.reshape(-1, x.shape[-1]).T @ da1.reshape(-1, da1.shape[-1])
    grads["b1"] = da1.reshape(-1, da1.shape[-1]).sum(axis=0)
    return grads


def _normalize_rows(z):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norms, norms


def info_nce_step(p, x, mask, text, temperature):
    """Symmetric cross-entropy over the in-batch similarity matrix.

    Returns (loss, grads).  Text embeddings are fixed targets.
    """
    z, cache = encode_fwd(p, x, mask)
    zh, norms = _normalize_rows(z.astype(np.float64))
    th, _ = _normalize_rows(text.astype(np.float64))
    B = z.shape[0]
    logits = (zh @ th.T) / temperature
    row_p = nn.softmax(logits, axis=1)
    col_p = nn.softmax(logits, axis=0)
    eye = np.eye(B)
    loss = -0.5 * (
        np.log(row_p[np.arange(B), np.arange(B)] + 1e-12).mean()
        + np.log(col_p[np.arange(B), np.arange(B)] + 1e-12).mean()
    )
    dlogits = 0.5 * ((row_p - eye) + (col_p - eye)) / B
    dzh = (dlogits @ th) / temperature
    dz = (dzh - zh * (zh * dzh).sum(axis=1, keepdims=True)) / norms
    grads = encode_bwd(p, cache, dz.astype(np.float32))
    return float(loss), grads


class EncoderFeatureExtractor:
    """Motion feature extractor backed by trained encoder parameters."""

    extractor_id = "encoder"

    def __init__(self, params: dict[str, np.ndarray], config: EncoderConfig):
        self.params = params
        self.config = config

    def extract(self, seq: MotionSequence) -> np.ndarray:
        x = seq.frames[None].astype(np.float32)
        mask = np.ones((1, x.shape[1]), dtype=np.float32)
        z, _ = encode_fwd(self.params, x, mask)
        return z[0].astype(np.float64)

    def extract_many(self, seqs: list[MotionSequence]) -> np.ndarray:
        return np.stack([self.extract(s) for s in seqs], axis=0)


def _pad_motions(seqs: list[MotionSequence]):
    max_len = max(s.n_frames for s in seqs)
    dim = seqs[0].frames.shape[1]
    x = np.zeros((len(seqs), max_len, dim), dtype=np.float32)
    mask = np.zeros((len(seqs), max_len), dtype=np.float32)
    for i, s in enumerate(seqs):
        x[i, : s.n_frames] = s.frames
        mask[i, : s.n_frames] = 1.0
    return x, mask


def train_contrastive_encoder(
    pairs: list[tuple[MotionSequence, str]],
    provider,
    config: EncoderConfig,
    log_fn=None,
) -> EncoderFeatureExtractor:
    """Fit the encoder on (motion, prompt) pairs; plain Adam, fixed targets."""
    rng = np.random.default_rng(config.seed)
    params = init_encoder(config, rng)
    text = np.stack(
        [pr.embeddings[pr.eos_index] for pr in (provider.embed(p) for _, p in pairs)],
        axis=0,
    ).astype(np.float64)
    motions = [m for m, _ in pairs]
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    t_step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(pairs), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            if len(idx) < 2:
                continue
            x, mask = _pad_motions([motions[i] for i in idx])
            loss, grads = info_nce_step(params, x, mask, text[idx], config.temperature)
            t_step += 1
            for k, g in grads.items():
                m_state[k] = 0.9 * m_state[k] + 0.1 * g
                v_state[k] = 0.999 * v_state[k] + 0.001 * g * g
                mh = m_state[k] / (1 - 0.9**t_step)
                vh = v_state[k] / (1 - 0.999**t_step)
                params[k] -= (config.lr * mh / (np.sqrt(vh) + 1e-8)).astype(np.float32)
            epoch_loss += loss
            n_batches += 1
        if log_fn is not None:
            log_fn(epoch, epoch_loss / max(1, n_batches))
    return EncoderFeatureExtractor(params, config)
