"""Noise schedule, forward noising, DDIM steps, and the guided sampler."""

import numpy as np
import pytest

from motiongen.data import DESK_LAYOUT
from motiongen.diffusion import (
    BETA_CLIP,
    NoiseSchedule,
    SamplerConfig,
    build_cosine_schedule,
    ddim_step,
    forward_noise,
    guide,
    sample,
    sampling_timesteps,
)
from motiongen.errors import ScheduleOutOfRangeError, ShapeMismatchError


def betas_of(schedule):
    ab = schedule.alpha_bar
    return 1.0 - ab[1:] / ab[:-1]


class TestCosineSchedule:
    def test_monotone_and_tail(self):
        s = build_cosine_schedule(1000)
        assert s.alpha_bar[0] == 1.0
        assert (np.diff(s.alpha_bar) < 0).all()
        assert s.alpha_bar[-1] > 0
        assert s.alpha_bar[-1] < 1e-3

    def test_closed_form_before_clipping(self):
        # for T=1000 only the final beta hits the clip, so every earlier
        # alpha_bar must equal the cosine law exactly
        T = 1000
        s = build_cosine_schedule(T)
        t = np.arange(T + 1)
        f = np.cos(((t / T + 0.008) / 1.008) * np.pi / 2) ** 2
        raw = f / f[0]
        np.testing.assert_allclose(s.alpha_bar[:T], raw[:T], rtol=1e-12)
        assert s.alpha_bar[T] == pytest.approx(s.alpha_bar[T - 1] * (1 - BETA_CLIP))

    def test_t_equals_one(self):
        s = build_cosine_schedule(1)
        assert s.alpha_bar.shape == (2,)
        assert s.alpha_bar[0] == 1.0

    @pytest.mark.parametrize("T", [1, 2, 10, 100, 1000, 4000])
    def test_beta_clip_and_monotone_any_t(self, T):
        s = build_cosine_schedule(T)
        assert (betas_of(s) <= BETA_CLIP + 1e-12).all()
        assert (np.diff(s.alpha_bar) < 0).all()
        assert s.alpha_bar[-1] > 0


class TestForwardNoise:
    def test_t_zero_identity(self, rng):
        s = build_cosine_schedule(100)
        x = rng.standard_normal((2, 5, 4)).astype(np.float32)
        noise = rng.standard_normal(x.shape).astype(np.float32)
        out = forward_noise(x, 0, noise, s)
        np.testing.assert_array_equal(out, x)

    def test_zero_noise_scales_signal(self, rng):
        s = build_cosine_schedule(100)
        x = rng.standard_normal((3, 4)).astype(np.float64)
        out = forward_noise(x, 50, np.zeros_like(x), s)
        np.testing.assert_allclose(out, np.sqrt(s.alpha_bar[50]) * x)

    def test_variance_preserving_monte_carlo(self, rng):
        # VP identity: noising a unit-variance signal keeps unit variance
        s = build_cosine_schedule(1000)
        n = 100_000
        x = rng.standard_normal((n, 1)).astype(np.float32)
        noise = rng.standard_normal((n, 1)).astype(np.float32)
        out = forward_noise(x, 1000, noise, s)
        assert abs(out.var() - 1.0) < 0.03

    def test_shape_mismatch(self, rng):
        s = build_cosine_schedule(10)
        with pytest.raises(ShapeMismatchError):
            forward_noise(np.zeros((2, 3)), 1, np.zeros((2, 4)), s)

    def test_per_sample_t(self, rng):
        s = build_cosine_schedule(100)
        x = np.ones((2, 3, 4), dtype=np.float64)
        out = forward_noise(x, np.array([10, 90]), np.zeros_like(x), s)
        np.testing.assert_allclose(out[0], np.sqrt(s.alpha_bar[10]))
        np.testing.assert_allclose(out[1], np.sqrt(s.alpha_bar[90]))


class TestDdimStep:
    def test_t_prev_zero_returns_x0(self, rng):
        s = build_cosine_schedule(100)
        x0 = rng.standard_normal((4, 3)).astype(np.float32)
        x_t = rng.standard_normal((4, 3)).astype(np.float32)
        out = ddim_step(x_t, x0, t_cur=7, t_prev=0, schedule=s)
        np.testing.assert_array_equal(out, x0)

    def test_epsilon_recovery(self, rng):
        # algebraic inversion: noising then stepping with the true x0
        # reproduces the forward coefficients on the same noise
        s = build_cosine_schedule(500)
        x = rng.standard_normal((6, 8)).astype(np.float64)
        eps = rng.standard_normal(x.shape).astype(np.float64)
        t_cur, t_prev = 300, 120
        x_t = forward_noise(x, t_cur, eps, s)
        out = ddim_step(x_t, x, t_cur, t_prev, s)
        expected = forward_noise(x, t_prev, eps, s)
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_identity_denoiser_chain_finite(self, rng):
        s = build_cosine_schedule(50)
        x = rng.standard_normal((3, 4)).astype(np.float32)
        steps = sampling_timesteps(s, 50)
        for t_cur, t_prev in zip(steps[:-1], steps[1:]):
            x = ddim_step(x, x, t_cur, t_prev, s)
        assert np.isfinite(x).all()

    def test_out_of_range(self, rng):
        s = build_cosine_schedule(10)
        x = np.zeros((2, 2))
        with pytest.raises(ScheduleOutOfRangeError):
            ddim_step(x, x, 5, 5, s)
        with pytest.raises(ScheduleOutOfRangeError):
            ddim_step(x, x, 11, 0, s)


class TestSampler:
    @staticmethod
    def _denoisers(rng, dim=59):
        w_u = rng.standard_normal((dim,)).astype(np.float32) * 0.1
        w_c = rng.standard_normal((dim,)).astype(np.float32) * 0.1

        def d_u(x, t):
            return np.tanh(x) * 0.5 + w_u

        def d_c(x, t):
            return np.tanh(x) * 0.4 + w_c

        return d_u, d_c

    def test_guidance_linearity_exact(self, rng):
        u = rng.standard_normal((5, 7))
        c = rng.standard_normal((5, 7))
        for s in (0.0, 0.3, 1.0, 2.5, 4.5):
            expected = u if s == 0.0 else c if s == 1.0 else u + s * (c - u)
            np.testing.assert_array_equal(guide(u, c, s), expected)

    def test_s1_collapses_to_conditional(self, rng):
        d_u, d_c = self._denoisers(rng)
        sched = build_cosine_schedule(100)
        cfg = SamplerConfig(n_steps=20, guidance_strength=1.0)
        out1 = sample(d_u, cfg, sched, 8, 59, np.random.default_rng(5), denoiser_cond=d_c)

        def only_cond(x, t):
            return d_c(x, t)

        cfg2 = SamplerConfig(n_steps=20, guidance_strength=1.0)
        out2 = sample(only_cond, cfg2, sched, 8, 59, np.random.default_rng(5))
        np.testing.assert_array_equal(out1.frames, out2.frames)

    def test_s0_collapses_to_unconditional(self, rng):
        d_u, d_c = self._denoisers(rng)
        sched = build_cosine_schedule(100)
        cfg = SamplerConfig(n_steps=20, guidance_strength=0.0)
        out1 = sample(d_u, cfg, sched, 8, 59, np.random.default_rng(6), denoiser_cond=d_c)
        out2 = sample(d_u, SamplerConfig(n_steps=20), sched, 8, 59, np.random.default_rng(6))
        np.testing.assert_array_equal(out1.frames, out2.frames)

    def test_same_seed_identical(self, rng):
        d_u, d_c = self._denoisers(rng)
        sched = build_cosine_schedule(100)
        cfg = SamplerConfig(n_steps=25, guidance_strength=2.0)
        a = sample(d_u, cfg, sched, 10, 59, np.random.default_rng(3), denoiser_cond=d_c)
        b = sample(d_u, cfg, sched, 10, 59, np.random.default_rng(3), denoiser_cond=d_c)
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_oracle_denoiser_reconstructs(self, rng):
        # full-length DDIM with a denoiser that always returns the true x
        T = 200
        sched = build_cosine_schedule(T)
        x = rng.standard_normal((12, 59)).astype(np.float64)
        eps = rng.standard_normal(x.shape).astype(np.float64)
        x_t = forward_noise(x, T, eps, sched)
        steps = sampling_timesteps(sched, T)
        cur = x_t
        for t_cur, t_prev in zip(steps[:-1], steps[1:]):
            cur = ddim_step(cur, x, t_cur, t_prev, sched)
        np.testing.assert_allclose(cur, x, atol=1e-4)

    def test_timestep_grid_endpoints(self):
        sched = build_cosine_schedule(1000)
        steps = sampling_timesteps(sched, 200)
        assert steps[0] == 1000 and steps[-1] == 0
        assert len(steps) == 201
        sched_small = build_cosine_schedule(7)
        steps = sampling_timesteps(sched_small, 7)
        assert steps == [7, 6, 5, 4, 3, 2, 1, 0]

    def test_sampler_config_validation(self):
        sched = build_cosine_schedule(10)
        with pytest.raises(ScheduleOutOfRangeError):
            SamplerConfig(n_steps=11).validate(sched)
        with pytest.raises(ValueError):
            SamplerConfig(n_steps=5, guidance_strength=-1.0).validate(sched)
