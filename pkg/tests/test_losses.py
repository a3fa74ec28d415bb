"""Training losses against independent 64-bit brute-force oracles."""

import numpy as np
import pytest

from motiongen.data import DESK_LAYOUT
from motiongen.errors import ShapeMismatchError
from motiongen.losses import (
    LossWeights,
    grad_loss_foot_contact,
    grad_loss_simple,
    grad_loss_velocity,
    grad_total_loss,
    loss_foot_contact,
    loss_simple,
    loss_velocity,
    total_loss,
)


def brute_simple(x, xh, t, mask, lam):
    """Loop-based masked weighted mean of squared error."""
    num = 0.0
    count = 0
    for b in range(x.shape[0]):
        for l in range(x.shape[1]):
            if mask[b, l] == 0:
                continue
            count += x.shape[2]
            for d in range(x.shape[2]):
                num += lam * (float(x[b, l, d]) - float(xh[b, l, d])) ** 2
    return num / count


def brute_velocity(x, xh, mask):
    num = 0.0
    count = 0
    for b in range(x.shape[0]):
        for l in range(x.shape[1] - 1):
            if mask[b, l] == 0 or mask[b, l + 1] == 0:
                continue
            count += x.shape[2]
            for d in range(x.shape[2]):
                vx = float(x[b, l + 1, d]) - float(x[b, l, d])
                vh = float(xh[b, l + 1, d]) - float(xh[b, l, d])
                num += (vx - vh) ** 2
    return num / count if count else 0.0


def brute_foot(x, xh, mask, layout):
    cols = layout.foot_position_columns()
    contact = layout.slice_of("foot_contacts")
    num = 0.0
    pairs = 0
    for b in range(x.shape[0]):
        for l in range(x.shape[1] - 1):
            if mask[b, l] == 0 or mask[b, l + 1] == 0:
                continue
            pairs += 1
            labels = x[b, l, contact] * x[b, l + 1, contact]
            for j in range(4):
                for axis in range(3):
                    c = cols[3 * j + axis]
                    v = float(xh[b, l + 1, c]) - float(xh[b, l, c])
                    num += (v * float(labels[j])) ** 2
    return num / pairs if pairs else 0.0


def random_pair(rng, b=2, l=7, layout=DESK_LAYOUT):
    x = rng.standard_normal((b, l, layout.dim)).astype(np.float32)
    contacts = layout.slice_of("foot_contacts")
    x[:, :, contacts] = (x[:, :, contacts] > 0).astype(np.float32)
    xh = rng.standard_normal((b, l, layout.dim)).astype(np.float32)
    mask = np.ones((b, l), dtype=np.float32)
    mask[1, l - 2 :] = 0
    return x, xh, mask


class TestLossSimple:
    def test_perfect_prediction(self, rng):
        x, _, mask = random_pair(rng)
        assert loss_simple(x, x.copy(), np.array([1, 2]), mask, LossWeights()) == 0.0

    def test_unit_error(self):
        x = np.zeros((1, 4, 59), dtype=np.float32)
        xh = np.ones_like(x)
        val = loss_simple(x, xh, np.array([5]), None, LossWeights())
        assert val == pytest.approx(1.0)

    def test_matches_brute_force(self, rng):
        x, xh, mask = random_pair(rng)
        t = np.array([3, 9])
        val = loss_simple(x, xh, t, mask, LossWeights())
        assert val == pytest.approx(brute_simple(x, xh, t, mask, 1.0), rel=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            loss_simple(np.zeros((1, 2, 3)), np.zeros((1, 2, 4)), np.array([1]),
                        None, LossWeights())


class TestLossVelocity:
    def test_constant_offset_is_free(self, rng):
        x, _, mask = random_pair(rng)
        xh = x + 0.7
        assert loss_velocity(x, xh, mask) == pytest.approx(0.0, abs=1e-10)

    def test_single_frame_contributes_zero(self, rng):
        x = rng.standard_normal((2, 1, 59)).astype(np.float32)
        assert loss_velocity(x, x + 1.0, None) == 0.0

    def test_matches_brute_force(self, rng):
        x, xh, mask = random_pair(rng)
        val = loss_velocity(x, xh, mask)
        assert val == pytest.approx(brute_velocity(x, xh, mask), rel=1e-6)


class TestLossFootContact:
    def test_no_contacts_no_loss(self, rng):
        x, xh, mask = random_pair(rng)
        x[:, :, DESK_LAYOUT.slice_of("foot_contacts")] = 0.0
        assert loss_foot_contact(x, xh, mask, DESK_LAYOUT) == 0.0

    def test_stationary_feet_no_loss(self, rng):
        x, xh, mask = random_pair(rng)
        x[:, :, DESK_LAYOUT.slice_of("foot_contacts")] = 1.0
        cols = DESK_LAYOUT.foot_position_columns()
        xh[:, :, cols] = 0.33
        assert loss_foot_contact(x, xh, mask, DESK_LAYOUT) == 0.0

    def test_matches_brute_force(self, rng):
        x, xh, mask = random_pair(rng)
        val = loss_foot_contact(x, xh, mask, DESK_LAYOUT)
        assert val == pytest.approx(brute_foot(x, xh, mask, DESK_LAYOUT), rel=1e-6)


class TestTotalLoss:
    def test_perfect_prediction_all_zero(self, rng):
        # ground truth satisfying the anti-sliding premise: feet frozen on
        # contact frames, so copying the target zeroes every term
        x, _, mask = random_pair(rng)
        x[:, :, DESK_LAYOUT.foot_position_columns()] = 0.25
        rep = total_loss(x, x.copy(), np.array([1, 2]), mask, LossWeights(), DESK_LAYOUT)
        assert rep.simple == rep.vel == rep.foot == rep.total == 0.0

    def test_zero_geometric_weights(self, rng):
        x, xh, mask = random_pair(rng)
        w = LossWeights(lambda_vel=0.0, lambda_foot=0.0)
        rep = total_loss(x, xh, np.array([1, 2]), mask, w, DESK_LAYOUT)
        assert rep.total == rep.simple

    def test_recombination(self, rng):
        x, xh, mask = random_pair(rng)
        t = np.array([5, 8])
        w = LossWeights()
        rep = total_loss(x, xh, t, mask, w, DESK_LAYOUT)
        expected = rep.simple + 30.0 * rep.vel + 30.0 * rep.foot
        assert rep.total == pytest.approx(expected, rel=1e-6)

    def test_padding_never_changes_loss(self, rng):
        x, xh, mask = random_pair(rng)
        t = np.array([5, 8])
        w = LossWeights()
        rep = total_loss(x, xh, t, mask, w, DESK_LAYOUT)
        pad = np.zeros((2, 3, 59), dtype=np.float32)
        junk = rng.standard_normal((2, 3, 59)).astype(np.float32)
        x_p = np.concatenate([x, pad], axis=1)
        xh_p = np.concatenate([xh, junk], axis=1)
        mask_p = np.concatenate([mask, np.zeros((2, 3), dtype=np.float32)], axis=1)
        rep_p = total_loss(x_p, xh_p, t, mask_p, w, DESK_LAYOUT)
        assert rep_p.total == pytest.approx(rep.total, rel=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(10):
            x, xh, mask = random_pair(rng)
            rep = total_loss(x, xh, np.array([1, 2]), mask, LossWeights(), DESK_LAYOUT)
            assert min(rep.simple, rep.vel, rep.foot, rep.total) >= 0.0


class TestLossGradients:
    @staticmethod
    def _fd_vs_analytic(rng, loss_fn, grad_fn):
        x = rng.standard_normal((2, 6, 59))
        contacts = DESK_LAYOUT.slice_of("foot_contacts")
        x[:, :, contacts] = (x[:, :, contacts] > 0).astype(np.float64)
        xh = rng.standard_normal((2, 6, 59))
        mask = np.ones((2, 6))
        mask[1, 4:] = 0
        g = grad_fn(x, xh, mask)
        h = 1e-6
        flat = xh.reshape(-1)
        for idx in rng.choice(flat.size, size=30, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn(x, xh, mask)
            flat[idx] = orig - h
            lm = loss_fn(x, xh, mask)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = g.reshape(-1)[idx]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-4) < 1e-3

    def test_simple_grad(self, rng):
        w = LossWeights()
        t = np.array([3, 4])
        self._fd_vs_analytic(
            rng,
            lambda x, xh, m: loss_simple(x, xh, t, m, w),
            lambda x, xh, m: grad_loss_simple(x, xh, t, m, w),
        )

    def test_velocity_grad(self, rng):
        self._fd_vs_analytic(rng, loss_velocity, grad_loss_velocity)

    def test_foot_grad(self, rng):
        self._fd_vs_analytic(
            rng,
            lambda x, xh, m: loss_foot_contact(x, xh, m, DESK_LAYOUT),
            lambda x, xh, m: grad_loss_foot_contact(x, xh, m, DESK_LAYOUT),
        )

    def test_total_grad(self, rng):
        w = LossWeights()
        t = np.array([3, 4])
        self._fd_vs_analytic(
            rng,
            lambda x, xh, m: total_loss(x, xh, t, m, w, DESK_LAYOUT).total,
            lambda x, xh, m: grad_total_loss(x, xh, t, m, w, DESK_LAYOUT),
        )
