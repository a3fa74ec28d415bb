"""AdamW with decoupled weight decay, plus the warmup/cosine LR schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    warmup_steps: int = 100
    total_steps: int = 1000
    weight_decay: float = 0.0
    decay_kind: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def lr_at_step(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to the peak LR, then cosine decay to zero."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if cfg.decay_kind == "none" or cfg.total_steps <= cfg.warmup_steps:
        return cfg.lr
    progress = (step - cfg.warmup_steps) / max(1, cfg.total_steps - cfg.warmup_steps)
    progress = min(1.0, progress)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * progress))


class AdamW:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        cfg = self.cfg
        lr = lr_at_step(self.step_count, cfg)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                self.m[name] = m
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            if cfg.weight_decay > 0.0:
                update = update + cfg.weight_decay * p
            p -= (lr * update).astype(p.dtype)
        return lr

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.m.items():
            out[f"opt.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"opt.v.{name}"] = arr
        return out

    def load_state(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = step_count
        for name, arr in tensors.items():
            if name.startswith("opt.m."):
                self.m[name[6:]] = arr.astype(np.float32)
            elif name.startswith("opt.v."):
                self.v[name[6:]] = arr.astype(np.float32)
