"""Cosine noise schedule, forward noising, and the deterministic DDIM reverse
sampler over a clean-motion-predicting denoiser, with classifier-free guidance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .data import DEFAULT_FPS, MotionSequence, get_layout
from .errors import ScheduleOutOfRangeError, ShapeMismatchError

BETA_CLIP = 0.999
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Signal-retention coefficients alpha_bar[0..T], alpha_bar[0] = 1."""

    T: int
    alpha_bar: np.ndarray  # (T+1,) float64, strictly decreasing
    schedule_kind: str = "cosine"

    def __post_init__(self):
        if self.alpha_bar.shape != (self.T + 1,):
            raise ShapeMismatchError(
                f"alpha_bar must have T+1={self.T + 1} entries, got {self.alpha_bar.shape}"
            )

    def check_t(self, t: int) -> None:
        if not 0 <= t <= self.T:
            raise ScheduleOutOfRangeError(f"timestep {t} outside [0, {self.T}]")


def build_cosine_schedule(T: int) -> NoiseSchedule:
    """alpha_bar_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1+s)) * pi/2),
    s = 0.008, re-derived through per-step betas clipped at 0.999."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * np.pi / 2.0) ** 2
    raw = f / f[0]
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    for i in range(1, T + 1):
        beta = min(1.0 - raw[i] / raw[i - 1], BETA_CLIP)
        alpha_bar[i] = alpha_bar[i - 1] * (1.0 - beta)
    return NoiseSchedule(T=T, alpha_bar=alpha_bar)


def forward_noise(
    x: np.ndarray, t: int | np.ndarray, noise: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Variance-preserving noising: sqrt(ab_t) * x + sqrt(1 - ab_t) * noise.

    `t` is a scalar or one timestep per leading batch entry.
    """
    if noise.shape != x.shape:
        raise ShapeMismatchError(f"noise shape {noise.shape} != x shape {x.shape}")
    t_arr = np.asarray(t, dtype=np.int64)
    if t_arr.min() < 0 or t_arr.max() > schedule.T:
        raise ScheduleOutOfRangeError(f"t outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t_arr]
    if t_arr.ndim > 0:
        ab = ab.reshape(ab.shape + (1,) * (x.ndim - 1))
    ab = ab.astype(x.dtype)
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * noise


def ddim_step(
    x_t: np.ndarray,
    x0_hat: np.ndarray,
    t_cur: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """One deterministic (eta=0) reverse step from t_cur down to t_prev."""
    schedule.check_t(t_cur)
    schedule.check_t(t_prev)
    if t_prev >= t_cur:
        raise ScheduleOutOfRangeError(f"t_prev={t_prev} must be < t_cur={t_cur}")
    ab_cur = float(schedule.alpha_bar[t_cur])
    ab_prev = float(schedule.alpha_bar[t_prev])
    dtype = x_t.dtype
    eps_hat = (x_t - np.sqrt(dtype.type(ab_cur)) * x0_hat) / np.sqrt(dtype.type(1.0 - ab_cur))
    if eta == 0.0:
        return np.sqrt(dtype.type(ab_prev)) * x0_hat + np.sqrt(dtype.type(1.0 - ab_prev)) * eps_hat
    sigma = eta * np.sqrt((1 - ab_prev) / (1 - ab_cur)) * np.sqrt(1 - ab_cur / ab_prev)
    sigma = min(sigma, np.sqrt(1 - ab_prev))
    z = rng.standard_normal(x_t.shape).astype(dtype) if rng is not None else 0.0
    return (
        np.sqrt(dtype.type(ab_prev)) * x0_hat
        + np.sqrt(dtype.type(1.0 - ab_prev - sigma**2)) * eps_hat
        + dtype.type(sigma) * z
    )


@dataclass
class SamplerConfig:
    n_steps: int = 200
    guidance_strength: float = 4.5
    seed: int = 0
    eta: float = 0.0

    def validate(self, schedule: NoiseSchedule) -> None:
        if not 1 <= self.n_steps <= schedule.T:
            raise ScheduleOutOfRangeError(
                f"n_steps={self.n_steps} outside [1, {schedule.T}]"
            )
        if self.guidance_strength < 0:
            raise ValueError(f"guidance strength must be >= 0, got {self.guidance_strength}")


def guide(u: np.ndarray, c: np.ndarray, s: float) -> np.ndarray:
    """Classifier-free combination (1-s)*u + s*c.

    s=0 and s=1 short-circuit so the collapse to a single denoiser is exact.
    """
    if s == 0.0:
        return u
    if s == 1.0:
        return c
    return u + u.dtype.type(s) * (c - u)


def sampling_timesteps(schedule: NoiseSchedule, n_steps: int) -> list[int]:
    """Evenly strided subsequence of [0, T] including both endpoints, descending."""
    grid = np.unique(np.round(np.linspace(0, schedule.T, n_steps + 1)).astype(int))
    return list(grid[::-1])


Denoiser = Callable[[np.ndarray, int], np.ndarray]
CondDenoiser = Callable[[np.ndarray, int], np.ndarray]


def sample(
    denoiser_uncond: Denoiser,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    length: int,
    dim: int,
    rng: np.random.Generator,
    denoiser_cond: Optional[CondDenoiser] = None,
    layout_id: int = 1,
    fps: int = DEFAULT_FPS,
) -> MotionSequence:
    """Draw one motion of `length` frames via guided DDIM.

    `denoiser_cond`, when given, must already close over its conditioning.
    """
    config.validate(schedule)
    s = config.guidance_strength
    x = rng.standard_normal((length, dim)).astype(np.float32)
    steps = sampling_timesteps(schedule, config.n_steps)
    for t_cur, t_prev in zip(steps[:-1], steps[1:]):
        if denoiser_cond is None:
            x0_hat = denoiser_uncond(x, t_cur)
        elif s == 1.0:
            x0_hat = denoiser_cond(x, t_cur)
        else:
            u = denoiser_uncond(x, t_cur)
            if s == 0.0:
                x0_hat = u
            else:
                x0_hat = guide(u, denoiser_cond(x, t_cur), s)
        x = ddim_step(x, x0_hat, t_cur, t_prev, schedule, eta=config.eta, rng=rng)
    frames = x.astype(np.float32)
    layout = get_layout(layout_id)
    contacts = layout.slice_of("foot_contacts")
    frames[:, contacts] = np.clip(frames[:, contacts], 0.0, 1.0)
    return MotionSequence(frames=frames, fps=fps, layout_id=layout_id)
