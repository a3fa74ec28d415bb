"""Unconditional diffusion pre-training over sliding random windows."""

from __future__ import annotations

import numpy as np

from .backbone import DenoiserParams, denoise_bwd, denoise_fwd
from .data import DatasetIndex, batch_windows, get_layout, sample_window
from .diffusion import NoiseSchedule, forward_noise
from .errors import NonFiniteActivationError
from .losses import LossWeights, grad_total_loss, total_loss
from .optim import AdamW, OptimizerConfig


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Stateless per-step stream so resumed runs replay the same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))


def pretrain(
    params: DenoiserParams,
    index: DatasetIndex,
    schedule: NoiseSchedule,
    weights: LossWeights,
    opt_config: OptimizerConfig,
    seed: int,
    steps: int,
    batch_size: int = 8,
    l_max: int = 300,
    start_step: int = 0,
    optimizer: AdamW | None = None,
    log_every: int = 100,
    log_fn=None,
) -> tuple[list[dict], AdamW]:
    """Train the denoiser to predict clean motion from noised windows.

    Deterministic given the seed; returns (loss history, optimizer) so the
    caller can checkpoint and resume.
    """
    layout = get_layout(index.layout_id)
    l_max = min(l_max, params.config.max_len)
    if optimizer is None:
        optimizer = AdamW(opt_config)
    history: list[dict] = []
    for step in range(start_step, steps):
        rng = step_rng(seed, step)
        samples = [sample_window(index, rng, l_max) for _ in range(batch_size)]
        pad_to = max(s.length for s in samples)
        x, mask = batch_windows(samples, pad_to)
        t = rng.integers(1, schedule.T + 1, size=batch_size)
        noise = rng.standard_normal(x.shape).astype(np.float32)
        x_t = forward_noise(x, t, noise, schedule)
        x0_hat, cache = denoise_fwd(params.tensors, params.config, x_t, t, mask)
        report = total_loss(x, x0_hat, t, mask, weights, layout)
        if not np.isfinite(report.total):
            raise NonFiniteActivationError(f"loss diverged at step {step}")
        dy = grad_total_loss(x, x0_hat, t, mask, weights, layout)
        grads, _ = denoise_bwd(params.tensors, params.config, cache, dy)
        optimizer.step(params.tensors, grads)
        history.append(
            {"step": step, "total": report.total, "simple": report.simple,
             "vel": report.vel, "foot": report.foot}
        )
        if log_fn is not None and (step % log_every == 0 or step == steps - 1):
            log_fn(step, report)
    return history, optimizer
