"""Training objective: clean-motion reconstruction plus geometric velocity
and foot-contact terms, all masked means computed with 64-bit accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureLayout
from .errors import ShapeMismatchError


@dataclass
class LossWeights:
    lambda_t_rule: str = "constant"
    lambda_t_value: float = 1.0
    lambda_vel: float = 30.0
    lambda_foot: float = 30.0

    def __post_init__(self):
        if min(self.lambda_t_value, self.lambda_vel, self.lambda_foot) < 0:
            raise ValueError("loss weights must be >= 0")

    def lambda_t(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t).reshape(-1)
        if self.lambda_t_rule == "constant":
            return np.full(t.shape, self.lambda_t_value, dtype=np.float64)
        raise ValueError(f"unknown lambda_t rule {self.lambda_t_rule!r}")


@dataclass
class LossReport:
    simple: float
    vel: float
    foot: float
    total: float
    n_frames: int
    n_pairs: int


def _check_shapes(x: np.ndarray, x0_hat: np.ndarray, mask: np.ndarray) -> None:
    if x.shape != x0_hat.shape:
        raise ShapeMismatchError(f"x {x.shape} != x0_hat {x0_hat.shape}")
    if mask.shape != x.shape[:2]:
        raise ShapeMismatchError(f"mask {mask.shape} incompatible with x {x.shape}")


def _full_mask(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[:2], dtype=np.float64)
    return np.asarray(mask, dtype=np.float64)


def loss_simple(
    x: np.ndarray,
    x0_hat: np.ndarray,
    t: np.ndarray,
    mask: np.ndarray | None,
    weights: LossWeights,
) -> float:
    """Timestep-weighted mean squared error over valid frame-features."""
    mask = _full_mask(x, mask)
    _check_shapes(x, x0_hat, mask)
    lam = weights.lambda_t(t)
    err = (x.astype(np.float64) - x0_hat.astype(np.float64)) ** 2
    per_sample = (err * mask[:, :, None]).sum(axis=(1, 2))
    denom = mask.sum() * x.shape[2]
    return float((lam * per_sample).sum() / denom)


def grad_loss_simple(x, x0_hat, t, mask, weights) -> np.ndarray:
    mask = _full_mask(x, mask)
    lam = weights.lambda_t(t)[:, None, None]
    denom = mask.sum() * x.shape[2]
    g = -2.0 * lam * (x - x0_hat) * mask[:, :, None] / denom
    return g.astype(x0_hat.dtype)


def _pair_mask(mask: np.ndarray) -> np.ndarray:
    return mask[:, 1:] * mask[:, :-1]


def loss_velocity(x: np.ndarray, x0_hat: np.ndarray, mask: np.ndarray | None) -> float:
    """MSE between first temporal differences over valid adjacent frame pairs."""
    mask = _full_mask(x, mask)
    _check_shapes(x, x0_hat, mask)
    if x.shape[1] < 2:
        return 0.0
    pm = _pair_mask(mask)
    denom = pm.sum() * x.shape[2]
    if denom == 0:
        return 0.0
    vx = np.diff(x.astype(np.float64), axis=1)
    vh = np.diff(x0_hat.astype(np.float64), axis=1)
    err = ((vx - vh) ** 2 * pm[:, :, None]).sum()
    return float(err / denom)


def grad_loss_velocity(x, x0_hat, mask) -> np.ndarray:
    mask = _full_mask(x, mask)
    g = np.zeros_like(x0_hat, dtype=np.float64)
    if x.shape[1] < 2:
        return g.astype(x0_hat.dtype)
    pm = _pair_mask(mask)
    denom = pm.sum() * x.shape[2]
    if denom == 0:
        return g.astype(x0_hat.dtype)
    vd = (np.diff(x.astype(np.float64), axis=1) - np.diff(x0_hat.astype(np.float64), axis=1))
    vd = vd * pm[:, :, None] * (2.0 / denom)
    g[:, 1:] -= vd
    g[:, :-1] += vd
    return g.astype(x0_hat.dtype)


def _foot_arrays(x, x0_hat, layout: FeatureLayout):
    foot_cols = layout.foot_position_columns()
    contact = layout.slice_of("foot_contacts")
    fp = x0_hat[:, :, foot_cols].astype(np.float64)
    fv = np.diff(fp, axis=1)
    # a (t -> t+1) velocity counts as sliding only when the foot is planted
    # at both endpoints; lift-off and touch-down intervals are free
    c = x[:, :, contact].astype(np.float64)
    c_pair = c[:, 1:] * c[:, :-1]
    c3 = np.repeat(c_pair, 3, axis=2)
    return foot_cols, fv, c3


def loss_foot_contact(
    x: np.ndarray, x0_hat: np.ndarray, mask: np.ndarray | None, layout: FeatureLayout
) -> float:
    """Mean over valid adjacent pairs of the squared norm of predicted
    foot-joint velocity gated by the ground-truth contact labels."""
    mask = _full_mask(x, mask)
    _check_shapes(x, x0_hat, mask)
    if x.shape[1] < 2:
        return 0.0
    pm = _pair_mask(mask)
    n_pairs = pm.sum()
    if n_pairs == 0:
        return 0.0
    _, fv, c3 = _foot_arrays(x, x0_hat, layout)
    sq = ((fv * c3) ** 2).sum(axis=2) * pm
    return float(sq.sum() / n_pairs)


def grad_loss_foot_contact(x, x0_hat, mask, layout: FeatureLayout) -> np.ndarray:
    mask = _full_mask(x, mask)
    g = np.zeros_like(x0_hat, dtype=np.float64)
    if x.shape[1] < 2:
        return g.astype(x0_hat.dtype)
    pm = _pair_mask(mask)
    n_pairs = pm.sum()
    if n_pairs == 0:
        return g.astype(x0_hat.dtype)
    foot_cols, fv, c3 = _foot_arrays(x, x0_hat, layout)
    dfv = 2.0 * fv * c3 * c3 * pm[:, :, None] / n_pairs
    gf = np.zeros((x.shape[0], x.shape[1], len(foot_cols)))
    gf[:, 1:] += dfv
    gf[:, :-1] -= dfv
    g[:, :, foot_cols] = gf
    return g.astype(x0_hat.dtype)


def total_loss(
    x: np.ndarray,
    x0_hat: np.ndarray,
    t: np.ndarray,
    mask: np.ndarray | None,
    weights: LossWeights,
    layout: FeatureLayout,
) -> LossReport:
    mask_f = _full_mask(x, mask)
    simple = loss_simple(x, x0_hat, t, mask, weights)
    vel = loss_velocity(x, x0_hat, mask)
    foot = loss_foot_contact(x, x0_hat, mask, layout)
    total = simple + weights.lambda_vel * vel + weights.lambda_foot * foot
    return LossReport(
        simple=simple,
        vel=vel,
        foot=foot,
        total=total,
        n_frames=int(mask_f.sum()),
        n_pairs=int(_pair_mask(mask_f).sum()),
    )


def grad_total_loss(
    x: np.ndarray,
    x0_hat: np.ndarray,
    t: np.ndarray,
    mask: np.ndarray | None,
    weights: LossWeights,
    layout: FeatureLayout,
) -> np.ndarray:
    g = grad_loss_simple(x, x0_hat, t, mask, weights).astype(np.float64)
    if weights.lambda_vel != 0.0:
        g += weights.lambda_vel * grad_loss_velocity(x, x0_hat, mask)
    if weights.lambda_foot != 0.0:
        g += weights.lambda_foot * grad_loss_foot_contact(x, x0_hat, mask, layout)
    return g.astype(x0_hat.dtype)
