"""Conditional denoiser: frozen pre-trained transformer plus trainable layer
copies feeding per-layer mixture-of-controllers blocks.

Layer l computes  frozen_layer(h_l) + moc_l(copy_layer(h_l), text),  so a
freshly built network (zero-initialized controller outputs) matches the
unconditional denoiser exactly.  Frozen tensors are checksummed at build
time and never enter the trainable set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .backbone import (
    DenoiserParams,
    ModelConfig,
    _block_bwd,
    _block_fwd,
    _t_embed_fwd,
    denoise_fwd,
)
from .checkpoint import tensor_checksum
from .data import FeatureLayout
from .diffusion import forward_noise
from .errors import (
    CheckpointMismatchError,
    LengthExceededError,
    NonFiniteActivationError,
    ShapeMismatchError,
)
from .losses import LossWeights, grad_total_loss, total_loss
from .moc import MoCConfig, init_moc_params, moc_bwd, moc_fwd
from .optim import AdamW, OptimizerConfig
from .text import EMBED_DIM, BatchedConditioning, TextConditioning, eos_dropout


@dataclass
class ControlNetParams:
    frozen: DenoiserParams
    trainable: dict[str, np.ndarray] = field(repr=False)
    moc_config: MoCConfig
    d_c: int = EMBED_DIM
    frozen_checksums: dict[str, str] = field(default_factory=dict, repr=False)

    @property
    def config(self) -> ModelConfig:
        return self.frozen.config

    def trainable_count(self) -> int:
        return sum(v.size for v in self.trainable.values())

    def verify_frozen(self) -> None:
        for name, arr in self.frozen.tensors.items():
            if tensor_checksum(arr) != self.frozen_checksums[name]:
                raise CheckpointMismatchError(f"frozen tensor {name} was modified")


def build_controlnet(
    pretrained: DenoiserParams,
    moc_config: MoCConfig,
    rng: np.random.Generator,
    d_c: int = EMBED_DIM,
) -> ControlNetParams:
    """Copy every transformer layer and attach a zero-initialized controller
    block to each; the pre-trained tensors themselves stay frozen."""
    config = pretrained.config
    trainable: dict[str, np.ndarray] = {}
    for name, arr in pretrained.tensors.items():
        if name.startswith("blocks."):
            trainable[f"copy.{name}"] = arr.copy()
    for i in range(config.n_layers):
        for name, arr in init_moc_params(config.d_model, d_c, moc_config, rng).items():
            trainable[f"moc.{i}.{name}"] = arr
    checksums = {name: tensor_checksum(arr) for name, arr in pretrained.tensors.items()}
    return ControlNetParams(
        frozen=pretrained,
        trainable=trainable,
        moc_config=moc_config,
        d_c=d_c,
        frozen_checksums=checksums,
    )


def conditional_denoise_fwd(
    cn: ControlNetParams,
    x_t: np.ndarray,
    t: np.ndarray,
    cond: BatchedConditioning,
    mask: np.ndarray | None = None,
):
    config = cn.config
    fz = cn.frozen.tensors
    tr = cn.trainable
    if x_t.ndim != 3 or x_t.shape[-1] != config.input_dim:
        raise ShapeMismatchError(f"x_t must be (B, L, {config.input_dim}), got {x_t.shape}")
    B, L, _ = x_t.shape
    if L > config.max_len:
        raise LengthExceededError(f"len {L} exceeds max_len {config.max_len}")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64).reshape(-1), (B,))
    dtype = x_t.dtype
    emb = cond.embeddings.astype(dtype)
    token_mask = cond.token_mask.astype(dtype)

    mod_in, t_cache = _t_embed_fwd(fz, t, dtype)
    h = nn.linear(x_t, fz["in_proj.w"], fz["in_proj.b"])
    cos, sin = nn.rope_tables(np.arange(L), config.d_head, dtype=dtype)
    layer_caches = []
    for i in range(config.n_layers):
        fro, fro_cache = _block_fwd(fz, f"blocks.{i}", h, mod_in, mask, cos, sin, config.n_heads)
        cp, cp_cache = _block_fwd(
            tr, f"copy.blocks.{i}", h, mod_in, mask, cos, sin, config.n_heads
        )
        res, moc_cache = moc_fwd(
            tr, cn.moc_config, cp, emb, token_mask, cond.eos_index,
            frame_mask=mask, prefix=f"moc.{i}.",
        )
        layer_caches.append((fro_cache, cp_cache, moc_cache))
        h = fro + res
    nf, invf = nn.layer_norm(h)
    modf = nn.linear(mod_in, fz["final.mod.w"], fz["final.mod.b"])
    d = config.d_model
    shift_f = modf[:, :d][:, None, :]
    scale_f = modf[:, d:][:, None, :]
    mf = nf * (1.0 + scale_f) + shift_f
    y = nn.linear(mf, fz["out_proj.w"], fz["out_proj.b"])
    if not np.isfinite(y).all():
        raise NonFiniteActivationError("conditional denoiser produced non-finite output")
    cache = (x_t, layer_caches, nf, invf, scale_f, mf)
    return y, cache


def conditional_denoise_bwd(
    cn: ControlNetParams, cache, dy: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients for the trainable set only; frozen tensors get none."""
    config = cn.config
    fz = cn.frozen.tensors
    tr = cn.trainable
    (x_t, layer_caches, nf, invf, scale_f, mf) = cache
    grads: dict[str, np.ndarray] = {}
    discard: dict[str, np.ndarray] = {}
    dmf = dy @ fz["out_proj.w"].T
    dnf = dmf * (1.0 + scale_f)
    dh = nn.layer_norm_bwd(dnf, nf, invf)
    for i in reversed(range(config.n_layers)):
        fro_cache, cp_cache, moc_cache = layer_caches[i]
        moc_grads, dcp = moc_bwd(tr, cn.moc_config, moc_cache, dh, prefix=f"moc.{i}.")
        grads.update(moc_grads)
        dh_copy, _ = _block_bwd(tr, f"copy.blocks.{i}", dcp, cp_cache, grads)
        discard.clear()
        dh_frozen, _ = _block_bwd(fz, f"blocks.{i}", dh, fro_cache, discard)
        dh = dh_copy + dh_frozen
    return grads


def conditional_denoise(
    cn: ControlNetParams,
    x_t: np.ndarray,
    t: np.ndarray | int,
    cond: BatchedConditioning | TextConditioning,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    if isinstance(cond, TextConditioning):
        cond = BatchedConditioning.from_list([cond])
    y, _ = conditional_denoise_fwd(cn, x_t, t, cond, mask)
    return y


def make_denoiser_fns(cn: ControlNetParams, cond: TextConditioning):
    """(unconditional, conditional) closures for the sampler, single sequence."""
    batched = BatchedConditioning.from_list([cond])

    def uncond(x, t):
        y, _ = denoise_fwd(cn.frozen.tensors, cn.config, x[None], np.array([t]), None)
        return y[0]

    def conditional(x, t):
        y, _ = conditional_denoise_fwd(cn, x[None], np.array([t]), batched, None)
        return y[0]

    return uncond, conditional


# ---------------------------------------------------------------------------
# fine-tuning

@dataclass
class FinetunePair:
    frames: np.ndarray  # (len, D) float32
    prompt: str


def _batch_pairs(pairs: list[FinetunePair], idx: np.ndarray):
    chosen = [pairs[i] for i in idx]
    max_len = max(p.frames.shape[0] for p in chosen)
    dim = chosen[0].frames.shape[1]
    x = np.zeros((len(chosen), max_len, dim), dtype=np.float32)
    mask = np.zeros((len(chosen), max_len), dtype=np.float32)
    for i, p in enumerate(chosen):
        x[i, : p.frames.shape[0]] = p.frames
        mask[i, : p.frames.shape[0]] = 1.0
    return x, mask, [p.prompt for p in chosen]


def finetune(
    cn: ControlNetParams,
    pairs: list[FinetunePair],
    schedule,
    weights: LossWeights,
    opt_config: OptimizerConfig,
    provider,
    layout: FeatureLayout,
    seed: int,
    steps: int,
    batch_size: int = 4,
    eos_drop_p: float = 0.5,
    log_every: int = 50,
    log_fn=None,
) -> list[dict]:
    """Train the trainable set on (motion, prompt) pairs with the same
    objective as pre-training; deterministic given the seed."""
    if not pairs:
        raise ValueError("finetune needs at least one pair")
    optimizer = AdamW(opt_config)
    empty = provider.empty_token()
    history: list[dict] = []
    for step in range(steps):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))
        # with replacement: small datasets still fill the batch, each slot
        # drawing its own timestep / noise / dropout variate
        idx = rng.integers(0, len(pairs), size=batch_size)
        x, mask, prompts = _batch_pairs(pairs, idx)
        conds = [
            eos_dropout(provider.embed(pr), empty, rng, p=eos_drop_p) for pr in prompts
        ]
        cond = BatchedConditioning.from_list(conds)
        t = rng.integers(1, schedule.T + 1, size=x.shape[0])
        noise = rng.standard_normal(x.shape).astype(np.float32)
        x_t = forward_noise(x, t, noise, schedule)
        x0_hat, cache = conditional_denoise_fwd(cn, x_t, t, cond, mask)
        report = total_loss(x, x0_hat, t, mask, weights, layout)
        if not np.isfinite(report.total):
            raise NonFiniteActivationError(f"loss diverged at step {step}")
        dy = grad_total_loss(x, x0_hat, t, mask, weights, layout)
        grads = conditional_denoise_bwd(cn, cache, dy)
        optimizer.step(cn.trainable, grads)
        history.append(
            {"step": step, "total": report.total, "simple": report.simple,
             "vel": report.vel, "foot": report.foot}
        )
        if log_fn is not None and (step % log_every == 0 or step == steps - 1):
            log_fn(step, report)
    return history
