"""Finite-difference validation of every hand-written backward pass."""

import numpy as np
import pytest

from conftest import cast64, directional_fd, fd_check_array, fd_check_params, randomize_params

from motiongen import nn
from motiongen.backbone import ModelConfig, denoise_bwd, denoise_fwd, init_params, preset_config
from motiongen.data import DESK_LAYOUT
from motiongen.losses import LossWeights, grad_total_loss, total_loss
from motiongen.moc import MoCConfig, init_moc_params, moc_bwd, moc_fwd


class TestPrimitives:
    def test_linear(self, rng):
        x = rng.standard_normal((3, 4, 5))
        w = rng.standard_normal((5, 6))
        b = rng.standard_normal(6)
        proj = rng.standard_normal((3, 4, 6))
        dx, dw, db = nn.linear_bwd(proj.copy(), x, w)
        fd_check_array(lambda: float((nn.linear(x, w, b) * proj).sum()), x, dx, rng)
        fd_check_array(lambda: float((nn.linear(x, w, b) * proj).sum()), w, dw, rng)
        fd_check_array(lambda: float((nn.linear(x, w, b) * proj).sum()), b, db, rng)

    def test_layer_norm(self, rng):
        x = rng.standard_normal((2, 5, 8)) * 2 + 1
        proj = rng.standard_normal(x.shape)
        y, inv = nn.layer_norm(x)
        dx = nn.layer_norm_bwd(proj.copy(), y, inv)
        fd_check_array(lambda: float((nn.layer_norm(x)[0] * proj).sum()), x, dx, rng)

    @pytest.mark.parametrize("fn,bwd", [(nn.gelu, nn.gelu_bwd), (nn.silu, nn.silu_bwd)])
    def test_activations(self, rng, fn, bwd):
        x = rng.standard_normal(64) * 2
        proj = rng.standard_normal(64)
        dx = bwd(proj.copy(), x)
        fd_check_array(lambda: float((fn(x) * proj).sum()), x, dx, rng)

    def test_softmax(self, rng):
        z = rng.standard_normal((4, 7))
        proj = rng.standard_normal((4, 7))
        p = nn.softmax(z)
        dz = nn.softmax_bwd(proj.copy(), p)
        fd_check_array(lambda: float((nn.softmax(z) * proj).sum()), z, dz, rng)

    def test_rope_adjoint(self, rng):
        cos, sin = nn.rope_tables(np.arange(6), 8, dtype=np.float64)
        x = rng.standard_normal((2, 6, 8))
        proj = rng.standard_normal(x.shape)
        dx = nn.apply_rope_bwd(proj.copy(), cos, sin)
        fd_check_array(lambda: float((nn.apply_rope(x, cos, sin) * proj).sum()), x, dx, rng)


class TestBackboneMicro:
    """Elementwise finite differences on a config small enough to sweep."""

    def _setup(self, rng, micro_config):
        params = init_params(micro_config, rng)
        tensors = randomize_params(params.tensors, rng, scale=0.1)
        x = rng.standard_normal((2, 4, micro_config.input_dim))
        t = np.array([3, 60])
        mask = np.ones((2, 4))
        mask[1, 3] = 0
        proj = rng.standard_normal(x.shape)

        def loss(ts):
            y, _ = denoise_fwd(ts, micro_config, x, t, mask)
            return float((y * proj).sum())

        y, cache = denoise_fwd(tensors, micro_config, x, t, mask)
        grads, dx = denoise_bwd(tensors, micro_config, cache, proj.copy())
        return tensors, grads, dx, x, loss, proj

    def test_every_tensor(self, rng, micro_config):
        tensors, grads, dx, x, loss, proj = self._setup(rng, micro_config)
        fd_check_params(loss, tensors, grads, rng, per_tensor=4)

    def test_input_gradient(self, rng, micro_config):
        tensors, grads, dx, x, loss, proj = self._setup(rng, micro_config)

        def loss_x():
            y, _ = denoise_fwd(tensors, micro_config, x, np.array([3, 60]),
                               np.concatenate([np.ones((2, 3)), [[1], [0]]], axis=1))
            return float((y * proj).sum())

        fd_check_array(loss_x, x, dx, rng)

    def test_zero_output_grad_zero_param_grads(self, rng, micro_config):
        params = init_params(micro_config, rng)
        tensors = cast64(params.tensors)
        x = rng.standard_normal((1, 3, micro_config.input_dim))
        y, cache = denoise_fwd(tensors, micro_config, x, np.array([5]), None)
        grads, _ = denoise_bwd(tensors, micro_config, cache, np.zeros_like(y))
        for name, g in grads.items():
            assert (g == 0).all(), name

    def test_duplicated_batch_item_doubles_grads(self, rng, micro_config):
        params = init_params(micro_config, rng)
        tensors = randomize_params(params.tensors, rng, scale=0.1)
        x1 = rng.standard_normal((1, 4, micro_config.input_dim))
        proj = rng.standard_normal(x1.shape)
        t1 = np.array([9])
        y1, c1 = denoise_fwd(tensors, micro_config, x1, t1, None)
        g1, _ = denoise_bwd(tensors, micro_config, c1, proj.copy())
        x2 = np.concatenate([x1, x1], axis=0)
        y2, c2 = denoise_fwd(tensors, micro_config, x2, np.array([9, 9]), None)
        g2, _ = denoise_bwd(tensors, micro_config, c2, np.concatenate([proj, proj], axis=0))
        for name in g1:
            np.testing.assert_allclose(g2[name], 2.0 * g1[name], rtol=1e-8, atol=1e-12)


class TestBackboneTinyPreset:
    """Per-parameter-group directional derivatives on the real Tiny preset."""

    def test_every_parameter_group(self, rng):
        config = preset_config("tiny", input_dim=DESK_LAYOUT.dim, max_len=32)
        params = init_params(config, rng)
        tensors = randomize_params(params.tensors, rng, scale=0.05)
        x = rng.standard_normal((2, 6, config.input_dim))
        t = np.array([17, 400])
        mask = np.ones((2, 6))
        mask[0, 5] = 0
        weights = LossWeights()

        def loss(ts):
            y, _ = denoise_fwd(ts, config, x.astype(np.float64), t, mask)
            return total_loss(x, y, t, mask, weights, DESK_LAYOUT).total

        y, cache = denoise_fwd(tensors, config, x.astype(np.float64), t, mask)
        dy = grad_total_loss(x, y, t, mask, weights, DESK_LAYOUT)
        grads, _ = denoise_bwd(tensors, config, cache, dy)
        for name in tensors:
            fd, an = directional_fd(loss, tensors, grads, name, rng, h=1e-3)
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-4)
            assert err < 1e-3, f"{name}: fd={fd:.8g} an={an:.8g} rel={err:.2e}"


class TestMocGradients:
    @pytest.mark.parametrize("variant", ["full", "no-mask", "ffn"])
    def test_all_params_and_input(self, rng, variant):
        config = MoCConfig(
            d_m=8, pool_size=3, gamma=4.0, beta=0.25,
            use_attention_mask=(variant != "no-mask"),
            experts_as_plain_ffn=(variant == "ffn"),
        )
        d_model, d_c = 10, 12
        tensors = randomize_params(init_moc_params(d_model, d_c, config, rng), rng, 0.3)
        B, l, n = 2, 4, 3
        h = rng.standard_normal((B, l, d_model))
        emb = rng.standard_normal((B, n, d_c))
        token_mask = np.ones((B, n))
        token_mask[1, 2] = 0
        eos_index = np.array([2, 1])
        frame_mask = np.ones((B, l))
        frame_mask[0, 3] = 0
        proj = rng.standard_normal((B, l, d_model))

        def loss(ts):
            out, _ = moc_fwd(ts, config, h, emb, token_mask, eos_index, frame_mask)
            return float((out * proj).sum())

        out, cache = moc_fwd(tensors, config, h, emb, token_mask, eos_index, frame_mask)
        grads, dh = moc_bwd(tensors, config, cache, proj.copy())
        fd_check_params(loss, tensors, grads, rng, per_tensor=5)

        def loss_h():
            out, _ = moc_fwd(tensors, config, h, emb, token_mask, eos_index, frame_mask)
            return float((out * proj).sum())

        fd_check_array(loss_h, h, dh, rng)
