"""Command-line entry points: gen-data, pretrain, finetune, sample, eval,
train-encoder.  Every command is deterministic given (config, seed); the
effective config is dumped next to the outputs so runs can be reproduced.

Exit codes: 2 config error, 3 data error, 4 numeric divergence,
5 checkpoint mismatch, 6 unknown prompt.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CKPT = 5
EXIT_PROMPT = 6

_SERIAL_ENV = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _pin_serial() -> None:
    for var in _SERIAL_ENV:
        os.environ.setdefault(var, "1")


class DataError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# checkpoint helpers

def _model_digest(tensors: dict) -> str:
    from .checkpoint import tensor_checksum

    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode("utf-8"))
        h.update(tensor_checksum(tensors[name]).encode("ascii"))
    return h.hexdigest()


def save_denoiser(path, params, meta, optimizer=None):
    from .checkpoint import save_checkpoint

    tensors = dict(params.tensors)
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
        meta = {**meta, "opt_step": optimizer.step_count}
    meta = {**meta, "kind": "denoiser", "model_digest": _model_digest(params.tensors)}
    save_checkpoint(path, meta, tensors)


def load_denoiser(path):
    from .backbone import DenoiserParams, ModelConfig
    from .checkpoint import load_checkpoint

    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        meta, tensors = load_checkpoint(path)
    except Exception as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if meta.get("kind") != "denoiser":
        raise CheckpointError(f"{path}: expected a denoiser checkpoint, got {meta.get('kind')}")
    config = ModelConfig(**meta["model_config"])
    model_tensors = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    opt_tensors = {k: v for k, v in tensors.items() if k.startswith("opt.")}
    params = DenoiserParams(config=config, tensors=model_tensors)
    return params, meta, opt_tensors


def save_controlnet(path, cn, meta):
    from .checkpoint import save_checkpoint

    tensors = {f"frozen.{k}": v for k, v in cn.frozen.tensors.items()}
    tensors.update(cn.trainable)
    meta = {
        **meta,
        "kind": "controlnet",
        "model_config": asdict(cn.frozen.config),
        "moc_config": asdict(cn.moc_config),
        "d_c": cn.d_c,
        "frozen_digest": _model_digest(cn.frozen.tensors),
    }
    save_checkpoint(path, meta, tensors)


def load_controlnet(path):
    from .backbone import DenoiserParams, ModelConfig
    from .checkpoint import load_checkpoint, tensor_checksum
    from .controlnet import ControlNetParams
    from .moc import MoCConfig

    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        meta, tensors = load_checkpoint(path)
    except Exception as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if meta.get("kind") != "controlnet":
        raise CheckpointError(f"{path}: expected a controlnet checkpoint")
    frozen_tensors = {
        k[len("frozen."):]: v for k, v in tensors.items() if k.startswith("frozen.")
    }
    trainable = {k: v for k, v in tensors.items() if not k.startswith("frozen.")}
    config = ModelConfig(**meta["model_config"])
    frozen = DenoiserParams(config=config, tensors=frozen_tensors)
    cn = ControlNetParams(
        frozen=frozen,
        trainable=trainable,
        moc_config=MoCConfig(**meta["moc_config"]),
        d_c=meta["d_c"],
        frozen_checksums={k: tensor_checksum(v) for k, v in frozen_tensors.items()},
    )
    return cn, meta


def _make_provider(cfg):
    from .text import FileEmbeddingProvider, StubEmbeddingProvider

    if cfg.get("stub_embedder"):
        return StubEmbeddingProvider()
    if cfg.get("embeddings"):
        path = Path(cfg["embeddings"])
        if not path.exists():
            raise DataError(f"embeddings file not found: {path}")
        return FileEmbeddingProvider(path)
    return None


def _layout_by_name(name):
    from .data import DESK_LAYOUT, HUMANML_LAYOUT

    try:
        return {"desk": DESK_LAYOUT, "humanml": HUMANML_LAYOUT}[name]
    except KeyError:
        from .config import ConfigError

        raise ConfigError(f"unknown layout {name!r}") from None


def _require(cfg, *keys):
    from .config import ConfigError

    for key in keys:
        if cfg.get(key) is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg) -> int:
    import numpy as np

    from .config import dump_effective
    from .synthetic import generate_paired_dataset, generate_synthetic_dataset

    _require(cfg, "out_dir")
    layout = _layout_by_name(cfg["layout"])
    rng = np.random.default_rng(cfg["seed"])
    if cfg["paired"]:
        index, prompts = generate_paired_dataset(
            cfg["out_dir"], cfg["clips"], rng, layout, n_frames=cfg["pair_frames"]
        )
        print(f"wrote {len(index.clips)} paired clips ({len(set(prompts.values()))} prompts)")
    else:
        index = generate_synthetic_dataset(
            cfg["out_dir"], cfg["clips"], rng, layout,
            min_frames=cfg["min_frames"], max_frames=cfg["max_frames"],
        )
        print(f"wrote {len(index.clips)} clips, {index.total_frames} frames")
    dump_effective(cfg, cfg["out_dir"], "gen-data")
    return 0


def _opt_config(cfg, total_steps):
    from .optim import OptimizerConfig

    return OptimizerConfig(
        lr=cfg["lr"],
        warmup_steps=cfg["warmup_steps"],
        total_steps=total_steps,
        weight_decay=cfg["weight_decay"],
        decay_kind=cfg["decay_kind"],
    )


def _loss_weights(cfg):
    from .losses import LossWeights

    return LossWeights(
        lambda_t_value=cfg["lambda_t"],
        lambda_vel=cfg["lambda_vel"],
        lambda_foot=cfg["lambda_foot"],
    )


def _write_history(out_dir, history):
    with open(Path(out_dir) / "loss_log.jsonl", "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_pretrain(cfg) -> int:
    import numpy as np

    from .backbone import init_params, preset_config
    from .config import dump_effective
    from .data import build_dataset_index, get_layout
    from .diffusion import build_cosine_schedule
    from .optim import AdamW
    from .train import pretrain

    _require(cfg, "data_dir", "out_dir")
    data_dir = Path(cfg["data_dir"])
    if not data_dir.is_dir():
        raise DataError(f"data dir not found: {data_dir}")
    index = build_dataset_index(data_dir)
    layout = get_layout(index.layout_id)
    config = preset_config(cfg["preset"], input_dim=layout.dim, max_len=cfg["l_max"])
    schedule = build_cosine_schedule(cfg["schedule_t"])
    weights = _loss_weights(cfg)
    opt_cfg = _opt_config(cfg, cfg["steps"])
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_effective(cfg, out_dir, "pretrain")

    start_step = 0
    optimizer = AdamW(opt_cfg)
    if cfg["resume"]:
        params, meta, opt_tensors = load_denoiser(cfg["resume"])
        if asdict(params.config) != asdict(config):
            raise CheckpointError("resume checkpoint config differs from run config")
        optimizer.load_state(opt_tensors, meta.get("opt_step", meta["step"]))
        start_step = meta["step"]
        print(f"resuming from step {start_step}")
    else:
        params = init_params(config, np.random.default_rng(cfg["seed"]))

    meta_base = {
        "model_config": asdict(config),
        "preset": cfg["preset"],
        "schedule_t": cfg["schedule_t"],
        "schedule_kind": schedule.schedule_kind,
        "layout_id": index.layout_id,
        "fps": index.fps,
        "seed": cfg["seed"],
    }
    history = []

    def log_fn(step, report):
        print(f"step {step} total {report.total:.6f} simple {report.simple:.6f} "
              f"vel {report.vel:.6f} foot {report.foot:.6f}")

    boundary = start_step
    while boundary < cfg["steps"]:
        chunk_end = min(boundary + cfg["ckpt_every"], cfg["steps"])
        part, optimizer = pretrain(
            params, index, schedule, weights, opt_cfg,
            seed=cfg["seed"], steps=chunk_end, batch_size=cfg["batch_size"],
            l_max=cfg["l_max"], start_step=boundary, optimizer=optimizer,
            log_every=cfg["log_every"], log_fn=log_fn,
        )
        history.extend(part)
        boundary = chunk_end
        save_denoiser(
            out_dir / f"ckpt_step{chunk_end:06d}.omgc", params,
            {**meta_base, "step": chunk_end}, optimizer,
        )
    save_denoiser(out_dir / "model.omgc", params, {**meta_base, "step": cfg["steps"]}, optimizer)
    _write_history(out_dir, history)
    print(f"saved {out_dir / 'model.omgc'}")
    return 0


def _load_pairs(data_dir, layout_check=None):
    from .controlnet import FinetunePair
    from .data import read_motion_file
    from .synthetic import load_prompts

    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data dir not found: {data_dir}")
    prompts_path = data_dir / "prompts.json"
    if not prompts_path.exists():
        raise DataError(f"paired data needs prompts.json in {data_dir}")
    prompts = load_prompts(data_dir)
    pairs = []
    layout_id = None
    fps = None
    for clip_id, prompt in sorted(prompts.items()):
        seq = read_motion_file(data_dir / f"{clip_id}.omgm")
        pairs.append(FinetunePair(frames=seq.frames, prompt=prompt))
        layout_id, fps = seq.layout_id, seq.fps
    if not pairs:
        raise DataError(f"no pairs in {data_dir}")
    return pairs, layout_id, fps


def _moc_config_from(cfg):
    from .moc import MoCConfig

    pool_size = cfg["pool_size"]
    ablation = cfg["ablation"]
    use_zero_conv = True
    use_attention_mask = True
    plain_ffn = False
    if ablation:
        if ablation.startswith("pool-size="):
            pool_size = int(ablation.split("=", 1)[1])
        elif ablation == "no-zero-conv":
            use_zero_conv = False
        elif ablation == "no-attn-mask":
            use_attention_mask = False
        elif ablation == "cross-attn-ffn":
            plain_ffn = True
    return MoCConfig(
        d_m=cfg["d_m"],
        pool_size=pool_size,
        gamma=cfg["gamma"],
        beta=cfg["beta"],
        use_attention_mask=use_attention_mask,
        use_zero_conv=use_zero_conv,
        experts_as_plain_ffn=plain_ffn,
    )


def cmd_finetune(cfg) -> int:
    import numpy as np

    from .config import ConfigError, dump_effective
    from .controlnet import build_controlnet, finetune
    from .data import get_layout
    from .diffusion import build_cosine_schedule

    _require(cfg, "pretrained", "data_dir", "out_dir")
    provider = _make_provider(cfg)
    if provider is None:
        raise ConfigError("finetune needs --embeddings or --stub-embedder")
    pretrained, pre_meta, _ = load_denoiser(cfg["pretrained"])
    pairs, layout_id, fps = _load_pairs(cfg["data_dir"])
    if layout_id != pre_meta["layout_id"]:
        raise CheckpointError(
            f"data layout {layout_id} != checkpoint layout {pre_meta['layout_id']}"
        )
    layout = get_layout(layout_id)
    schedule = build_cosine_schedule(pre_meta["schedule_t"])
    moc_config = _moc_config_from(cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_effective(cfg, out_dir, "finetune")

    cn = build_controlnet(pretrained, moc_config, np.random.default_rng(cfg["seed"]))

    def log_fn(step, report):
        print(f"step {step} total {report.total:.6f} simple {report.simple:.6f} "
              f"vel {report.vel:.6f} foot {report.foot:.6f}")

    history = finetune(
        cn, pairs, schedule, _loss_weights(cfg), _opt_config(cfg, cfg["steps"]),
        provider, layout, seed=cfg["seed"], steps=cfg["steps"],
        batch_size=cfg["batch_size"], eos_drop_p=cfg["eos_drop_p"],
        log_every=cfg["log_every"], log_fn=log_fn,
    )
    cn.verify_frozen()
    meta = {
        "schedule_t": pre_meta["schedule_t"],
        "schedule_kind": pre_meta["schedule_kind"],
        "layout_id": layout_id,
        "fps": fps,
        "seed": cfg["seed"],
        "step": cfg["steps"],
        "ablation": cfg["ablation"],
        "pretrained_digest": pre_meta["model_digest"],
    }
    save_controlnet(out_dir / "controlnet.omgc", cn, meta)
    _write_history(out_dir, history)
    print(f"saved {out_dir / 'controlnet.omgc'}")
    return 0


def _dump_csv(seq, path):
    layout = seq.layout
    sl = layout.slice_of("joint_positions")
    pos = seq.frames[:, sl]
    n_joints = layout.n_joints - 1
    header = ",".join(f"j{j}_{a}" for j in range(1, n_joints + 1) for a in "xyz")
    lines = [header]
    for row in pos:
        lines.append(",".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_sample(cfg) -> int:
    import numpy as np

    from .backbone import denoise_fwd
    from .config import ConfigError, dump_effective
    from .checkpoint import checkpoint_digest
    from .controlnet import conditional_denoise_fwd
    from .data import write_motion_file
    from .diffusion import SamplerConfig, build_cosine_schedule, sample
    from .text import BatchedConditioning

    _require(cfg, "out_dir")
    if not cfg["unconditional"] and cfg["prompt"] is None:
        raise ConfigError("sample needs --prompt or --unconditional")

    cn = None
    meta = None
    uncond_params = None
    digests = {}
    if cfg["control"]:
        cn, meta = load_controlnet(cfg["control"])
        uncond_params = cn.frozen
        digests["control"] = checkpoint_digest(cfg["control"])
    if cfg["checkpoint"]:
        uncond_params, den_meta, _ = load_denoiser(cfg["checkpoint"])
        digests["checkpoint"] = checkpoint_digest(cfg["checkpoint"])
        if cn is not None and meta["pretrained_digest"] != den_meta["model_digest"]:
            raise CheckpointError(
                "controlnet was fine-tuned from a different pre-trained checkpoint"
            )
        meta = meta or den_meta
    if uncond_params is None:
        raise ConfigError("sample needs --checkpoint and/or --control")
    if cfg["prompt"] is not None and cn is None:
        raise ConfigError("conditional sampling needs --control")

    cond = None
    if cfg["prompt"] is not None:
        provider = _make_provider(cfg)
        if provider is None:
            raise ConfigError("conditional sampling needs --embeddings or --stub-embedder")
        cond = provider.embed(cfg["prompt"])

    schedule = build_cosine_schedule(meta["schedule_t"])
    length = cfg["length"]
    if length > uncond_params.config.max_len:
        raise ConfigError(
            f"length {length} exceeds model max_len {uncond_params.config.max_len}"
        )
    sampler = SamplerConfig(
        n_steps=cfg["steps"], guidance_strength=cfg["s"], seed=cfg["seed"]
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_effective(cfg, out_dir, "sample")

    def uncond_fn(x, t):
        y, _ = denoise_fwd(uncond_params.tensors, uncond_params.config, x[None], np.array([t]), None)
        return y[0]

    cond_fn = None
    if cond is not None:
        batched = BatchedConditioning.from_list([cond])

        def cond_fn(x, t):
            y, _ = conditional_denoise_fwd(cn, x[None], np.array([t]), batched, None)
            return y[0]

    files = []
    prompts_map = {}
    for i in range(cfg["count"]):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg["seed"], spawn_key=(i,))
        )
        seq = sample(
            uncond_fn, sampler, schedule, length, uncond_params.config.input_dim, rng,
            denoiser_cond=cond_fn if not cfg["unconditional"] else None,
            layout_id=meta["layout_id"], fps=meta["fps"],
        )
        name = f"motion_{i:03d}.omgm"
        write_motion_file(seq, out_dir / name)
        files.append(name)
        if cfg["prompt"] is not None:
            prompts_map[f"motion_{i:03d}"] = cfg["prompt"]
        if cfg["dump_csv"]:
            _dump_csv(seq, out_dir / f"motion_{i:03d}.csv")
    manifest = {
        "prompt": cfg["prompt"],
        "unconditional": cfg["unconditional"],
        "seed": cfg["seed"],
        "s": cfg["s"],
        "steps": cfg["steps"],
        "length": length,
        "count": cfg["count"],
        "checkpoints": digests,
        "files": files,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    if prompts_map:
        with open(out_dir / "prompts.json", "w", encoding="utf-8") as fh:
            json.dump(prompts_map, fh, indent=2, sort_keys=True)
    print(f"wrote {len(files)} motions to {out_dir}")
    return 0


def _load_dir_seqs(path):
    from .data import read_motion_file

    path = Path(path)
    if not path.is_dir():
        raise DataError(f"directory not found: {path}")
    files = sorted(path.glob("*.omgm"))
    if not files:
        raise DataError(f"no .omgm files in {path}")
    return {f.stem: read_motion_file(f) for f in files}


def _load_encoder(path):
    from .checkpoint import load_checkpoint
    from .encoder import EncoderConfig, EncoderFeatureExtractor

    if not Path(path).exists():
        raise DataError(f"encoder checkpoint not found: {path}")
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise CheckpointError(f"{path}: expected an encoder checkpoint")
    return EncoderFeatureExtractor(tensors, EncoderConfig(**meta["encoder_config"]))


def cmd_eval(cfg) -> int:
    import numpy as np

    from .config import ConfigError, dump_effective
    from .metrics import (
        FeatureStats,
        StatsFeatureExtractor,
        clip_score,
        diversity,
        frechet_distance,
        metric_report,
        r_precision,
    )

    _require(cfg, "generated", "reference")
    gen = _load_dir_seqs(cfg["generated"])
    ref = _load_dir_seqs(cfg["reference"])

    if cfg["extractor"] == "stats":
        extractor = StatsFeatureExtractor()
    elif cfg["extractor"] == "encoder":
        if not cfg["encoder_ckpt"]:
            raise ConfigError("--extractor encoder needs --encoder-ckpt")
        extractor = _load_encoder(cfg["encoder_ckpt"])
    else:
        raise ConfigError(f"unknown extractor {cfg['extractor']!r}")

    gen_ids = sorted(gen)
    gen_feats = extractor.extract_many([gen[g] for g in gen_ids])
    ref_feats = extractor.extract_many([ref[r] for r in sorted(ref)])

    text_feats = None
    prompts_path = Path(cfg["generated"]) / "prompts.json"
    provider = _make_provider(cfg)
    if prompts_path.exists() and provider is not None:
        prompts = json.loads(prompts_path.read_text(encoding="utf-8"))
        if all(g in prompts for g in gen_ids):
            conds = [provider.embed(prompts[g]) for g in gen_ids]
            text_feats = np.stack(
                [c.embeddings[c.eos_index].astype(np.float64) for c in conds]
            )

    records = []
    seed = cfg["seed"]
    n_replicates = cfg["replicates"]
    for rep in range(n_replicates):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))
        sub_gen = gen_feats[rng.permutation(len(gen_feats))[: max(2, int(0.9 * len(gen_feats)))]]
        sub_ref = ref_feats[rng.permutation(len(ref_feats))[: max(2, int(0.9 * len(ref_feats)))]]
        fid = frechet_distance(
            FeatureStats.from_features(sub_gen), FeatureStats.from_features(sub_ref)
        )
        records.append(metric_report("fid", fid, len(sub_gen), seed + rep, extractor.extractor_id))
        n_pairs = min(cfg["n_pairs"], len(gen_feats) // 2)
        if n_pairs >= 1:
            div = diversity(gen_feats, n_pairs, rng)
            records.append(
                metric_report("diversity", div, len(gen_feats), seed + rep, extractor.extractor_id)
            )
        if text_feats is not None and extractor.extractor_id == "encoder":
            cs = clip_score(gen_feats, text_feats)
            records.append(
                metric_report("clip_score", cs, len(gen_feats), seed + rep, extractor.extractor_id)
            )
            if len(gen_feats) >= cfg["pool_size"]:
                rp = r_precision(
                    gen_feats, text_feats, rng, pool_size=cfg["pool_size"], top_k=cfg["top_k"]
                )
                records.append(
                    metric_report("r_precision", rp, len(gen_feats), seed + rep,
                                  extractor.extractor_id)
                )

    summary = {}
    for name in {r["metric"] for r in records}:
        values = np.array([r["value"] for r in records if r["metric"] == name])
        ci = 1.96 * values.std(ddof=1) / np.sqrt(len(values)) if len(values) > 1 else 0.0
        summary[name] = {"mean": float(values.mean()), "ci95": float(ci), "n": len(values)}
    report = {"records": records, "summary": summary, "replicates": n_replicates}
    out_path = Path(cfg["out"]) if cfg["out"] else Path(cfg["generated"]) / "metrics.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    dump_effective(cfg, out_path.parent, "eval")
    for name, entry in sorted(summary.items()):
        print(f"{name}: {entry['mean']:.6f} +/- {entry['ci95']:.6f}")
    return 0


def cmd_train_encoder(cfg) -> int:
    from .checkpoint import save_checkpoint
    from .config import ConfigError, dump_effective
    from .data import MotionSequence, get_layout, read_motion_file
    from .encoder import EncoderConfig, train_contrastive_encoder
    from .synthetic import load_prompts

    _require(cfg, "data_dir", "out")
    provider = _make_provider(cfg)
    if provider is None:
        raise ConfigError("train-encoder needs --embeddings or --stub-embedder")
    data_dir = Path(cfg["data_dir"])
    if not data_dir.is_dir():
        raise DataError(f"data dir not found: {data_dir}")
    prompts = load_prompts(data_dir)
    pairs = []
    input_dim = None
    for clip_id, prompt in sorted(prompts.items()):
        seq = read_motion_file(data_dir / f"{clip_id}.omgm")
        pairs.append((seq, prompt))
        input_dim = seq.frames.shape[1]
    enc_cfg = EncoderConfig(
        input_dim=input_dim, hidden=cfg["hidden"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], lr=cfg["lr"], seed=cfg["seed"],
    )
    extractor = train_contrastive_encoder(
        pairs, provider, enc_cfg,
        log_fn=lambda e, loss: print(f"epoch {e} loss {loss:.4f}"),
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, {"kind": "encoder", "encoder_config": asdict(enc_cfg)},
                    extractor.params)
    dump_effective(cfg, out.parent, "train-encoder")
    print(f"saved {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(sp):
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--serial", action="store_true", default=None,
                    help="force bitwise-reproducible serial mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motiongen")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="write a synthetic motion dataset")
    _add_common(sp)
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--clips", type=int, default=None)
    sp.add_argument("--layout", choices=("desk", "humanml"), default=None)
    sp.add_argument("--paired", action="store_true", default=None)
    sp.add_argument("--pair-frames", dest="pair_frames", type=int, default=None)

    sp = sub.add_parser("pretrain", help="unconditional diffusion pre-training")
    _add_common(sp)
    sp.add_argument("--data-dir", dest="data_dir")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--preset", choices=("tiny", "base", "large", "huge", "giant"), default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--l-max", dest="l_max", type=int, default=None)
    sp.add_argument("--schedule-t", dest="schedule_t", type=int, default=None)
    sp.add_argument("--ckpt-every", dest="ckpt_every", type=int, default=None)
    sp.add_argument("--resume", default=None)

    sp = sub.add_parser("finetune", help="conditional controller fine-tuning")
    _add_common(sp)
    sp.add_argument("--pretrained")
    sp.add_argument("--data-dir", dest="data_dir")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--stub-embedder", dest="stub_embedder", action="store_true", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--d-m", dest="d_m", type=int, default=None)
    sp.add_argument("--ablation", default=None,
                    help="no-zero-conv | no-attn-mask | cross-attn-ffn | pool-size=K")

    sp = sub.add_parser("sample", help="guided DDIM sampling to .omgm files")
    _add_common(sp)
    sp.add_argument("--checkpoint", default=None, help="pre-trained denoiser")
    sp.add_argument("--control", default=None, help="controlnet checkpoint")
    sp.add_argument("--prompt", default=None)
    sp.add_argument("--unconditional", action="store_true", default=None)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--stub-embedder", dest="stub_embedder", action="store_true", default=None)
    sp.add_argument("--s", type=float, default=None, help="guidance strength")
    sp.add_argument("--steps", type=int, default=None, help="DDIM steps")
    sp.add_argument("--length", type=int, default=None)
    sp.add_argument("--count", type=int, default=None)
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--dump-csv", dest="dump_csv", action="store_true", default=None)

    sp = sub.add_parser("eval", help="metrics between generated and reference dirs")
    _add_common(sp)
    sp.add_argument("--generated")
    sp.add_argument("--reference")
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--extractor", choices=("stats", "encoder"), default=None)
    sp.add_argument("--encoder-ckpt", dest="encoder_ckpt", default=None)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--stub-embedder", dest="stub_embedder", action="store_true", default=None)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("train-encoder", help="train the contrastive motion encoder")
    _add_common(sp)
    sp.add_argument("--data-dir", dest="data_dir")
    sp.add_argument("--out")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--no-stub-embedder", dest="stub_embedder", action="store_false", default=None)

    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "train-encoder": cmd_train_encoder,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--serial" in argv:
        _pin_serial()
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        k: v for k, v in vars(args).items() if k not in ("command", "config")
    }
    from .config import ConfigError, load_config
    from .errors import (
        BadMagicError,
        CheckpointMismatchError,
        DimensionMismatchError,
        EmptyDatasetError,
        LayoutMismatchError,
        LengthExceededError,
        NonFiniteActivationError,
        NonFiniteValueError,
        UnknownPromptError,
    )

    try:
        cfg = load_config(args.command, args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, CheckpointMismatchError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CKPT
    except UnknownPromptError as exc:
        print(f"unknown prompt: {exc}", file=sys.stderr)
        return EXIT_PROMPT
    except NonFiniteActivationError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, EmptyDatasetError, BadMagicError, DimensionMismatchError,
            LayoutMismatchError, LengthExceededError, NonFiniteValueError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
