"""Per-command run configuration: JSON files merged with CLI overrides,
unknown keys rejected, effective config dumped next to outputs."""

from __future__ import annotations

import json
from pathlib import Path


class ConfigError(ValueError):
    pass


COMMON = {
    "seed": 0,
    "serial": False,
}

DEFAULTS: dict[str, dict] = {
    "gen-data": {
        **COMMON,
        "out_dir": None,
        "clips": 8,
        "layout": "desk",
        "paired": False,
        "min_frames": 60,
        "max_frames": 240,
        "pair_frames": 48,
    },
    "pretrain": {
        **COMMON,
        "data_dir": None,
        "out_dir": None,
        "preset": "tiny",
        "schedule_t": 1000,
        "l_max": 300,
        "steps": 2000,
        "batch_size": 8,
        "lr": 1e-3,
        "warmup_steps": 100,
        "weight_decay": 0.0,
        "decay_kind": "cosine",
        "lambda_t": 1.0,
        "lambda_vel": 30.0,
        "lambda_foot": 30.0,
        "ckpt_every": 500,
        "log_every": 100,
        "resume": None,
    },
    "finetune": {
        **COMMON,
        "pretrained": None,
        "data_dir": None,
        "out_dir": None,
        "embeddings": None,
        "stub_embedder": False,
        "steps": 1000,
        "batch_size": 4,
        "lr": 3e-4,
        "warmup_steps": 100,
        "weight_decay": 1e-5,
        "decay_kind": "cosine",
        "lambda_t": 1.0,
        "lambda_vel": 30.0,
        "lambda_foot": 30.0,
        "d_m": 32,
        "pool_size": 12,
        "gamma": 24.0,
        "beta": 0.25,
        "ablation": None,
        "eos_drop_p": 0.5,
        "log_every": 100,
    },
    "sample": {
        **COMMON,
        "checkpoint": None,
        "control": None,
        "prompt": None,
        "unconditional": False,
        "embeddings": None,
        "stub_embedder": False,
        "s": 4.5,
        "steps": 200,
        "length": 120,
        "count": 1,
        "out_dir": None,
        "dump_csv": False,
    },
    "eval": {
        **COMMON,
        "generated": None,
        "reference": None,
        "replicates": 20,
        "n_pairs": 16,
        "pool_size": 32,
        "top_k": 3,
        "extractor": "stats",
        "encoder_ckpt": None,
        "embeddings": None,
        "stub_embedder": False,
        "out": None,
    },
    "train-encoder": {
        **COMMON,
        "data_dir": None,
        "out": None,
        "embeddings": None,
        "stub_embedder": True,
        "hidden": 128,
        "epochs": 60,
        "batch_size": 32,
        "lr": 1e-3,
    },
}

ABLATIONS = ("no-zero-conv", "no-attn-mask", "cross-attn-ffn")


def load_config(command: str, config_path: str | None, overrides: dict) -> dict:
    """Defaults <- config file <- CLI flags; unknown keys are an error."""
    cfg = dict(DEFAULTS[command])
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            from_file = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError(f"{path}: top-level JSON must be an object")
        for key, value in from_file.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key for {command}: {key!r}")
            cfg[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in cfg:
            raise ConfigError(f"unknown config key for {command}: {key!r}")
        cfg[key] = value
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    ablation = cfg.get("ablation")
    if ablation is not None:
        if ablation.startswith("pool-size="):
            try:
                k = int(ablation.split("=", 1)[1])
            except ValueError:
                raise ConfigError(f"bad pool-size ablation: {ablation!r}") from None
            if k < 1:
                raise ConfigError("pool-size ablation needs K >= 1")
        elif ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}")
    if cfg.get("seed") is not None and int(cfg["seed"]) < 0:
        raise ConfigError("seed must be >= 0")
    for key in ("steps", "batch_size", "count", "length", "replicates", "clips"):
        if key in cfg and cfg[key] is not None and int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be >= 1")


def dump_effective(cfg: dict, out_dir: str | Path, command: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **cfg}
    with open(out_dir / "config.effective.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
