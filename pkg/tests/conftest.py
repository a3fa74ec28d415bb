"""Shared fixtures and the finite-difference gradient-check helper."""

from __future__ import annotations

import numpy as np
import pytest

from motiongen import nn
from motiongen.backbone import ModelConfig
from motiongen.data import DESK_LAYOUT


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def micro_config():
    """Small enough for elementwise finite differences."""
    return ModelConfig(n_layers=2, d_model=8, n_heads=2, d_head=4,
                       input_dim=6, max_len=16)


@pytest.fixture
def desk_layout():
    return DESK_LAYOUT


def randomize_params(tensors: dict, rng: np.random.Generator, scale: float = 0.1) -> dict:
    """float64 copy with every tensor (including zero-initialized ones)
    randomized, so gradients flow through all paths."""
    return {k: rng.standard_normal(v.shape) * scale for k, v in tensors.items()}


def fd_check_params(
    loss_fn,
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    rng: np.random.Generator,
    names=None,
    per_tensor: int = 6,
    h: float = 1e-6,
    rtol: float = 1e-3,
    floor: float = 1e-3,
):
    """Central-difference check of `grads` against `loss_fn(tensors)` at
    randomly chosen entries of each named tensor."""
    worst = 0.0
    for name in names if names is not None else tensors:
        flat = tensors[name].reshape(-1)
        idxs = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn(tensors)
            flat[idx] = orig - h
            lm = loss_fn(tensors)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].reshape(-1)[idx]
            err = abs(fd - an) / max(abs(fd), abs(an), floor)
            worst = max(worst, err)
            assert err < rtol, f"{name}[{idx}]: fd={fd:.8g} analytic={an:.8g} rel={err:.2e}"
    return worst


def fd_check_array(loss_fn, x: np.ndarray, grad: np.ndarray, rng: np.random.Generator,
                   n_entries: int = 12, h: float = 1e-6, rtol: float = 1e-3,
                   floor: float = 1e-3):
    """Same check for the gradient with respect to an input array."""
    flat = x.reshape(-1)
    idxs = rng.choice(flat.size, size=min(n_entries, flat.size), replace=False)
    for idx in idxs:
        orig = flat[idx]
        flat[idx] = orig + h
        lp = loss_fn()
        flat[idx] = orig - h
        lm = loss_fn()
        flat[idx] = orig
        fd = (lp - lm) / (2 * h)
        an = grad.reshape(-1)[idx]
        err = abs(fd - an) / max(abs(fd), abs(an), floor)
        assert err < rtol, f"x[{idx}]: fd={fd:.8g} analytic={an:.8g} rel={err:.2e}"


def directional_fd(loss_fn, tensors: dict, grads: dict, name: str,
                   rng: np.random.Generator, h: float = 1e-3) -> tuple[float, float]:
    """Central difference along a random direction within one parameter
    group; returns (finite-difference slope, analytic slope)."""
    direction = rng.standard_normal(tensors[name].shape)
    direction /= np.linalg.norm(direction)
    orig = tensors[name].copy()
    tensors[name] = orig + h * direction
    lp = loss_fn(tensors)
    tensors[name] = orig - h * direction
    lm = loss_fn(tensors)
    tensors[name] = orig
    fd = (lp - lm) / (2 * h)
    an = float((grads[name] * direction).sum())
    return fd, an


def cast64(tensors: dict) -> dict:
    return nn.cast_params(tensors, np.float64)
