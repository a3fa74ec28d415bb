"""Synthetic motion generators used in place of real mocap corpora.

Clips are smooth band-limited trajectories: non-foot channels are sums of
at most four sinusoids.  Foot joints follow a rectified-sine gait that is
exactly stationary during stance, so the ground truth satisfies the
anti-sliding premise of the foot-contact loss (a raw sinusoid would slide
while in contact and put a floor under the training objective).  Joint
velocities are forward differences of the position channels, and foot
contacts are thresholded from the synthetic foot heights, so the
physical-consistency oracles hold by construction.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_FPS,
    DESK_LAYOUT,
    DatasetIndex,
    FeatureLayout,
    MotionSequence,
    build_dataset_index,
    write_motion_file,
)

STANCE_HEIGHT = 0.02
CONTACT_HEIGHT = 0.03
STEP_LIFT = 0.12
_IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def _band_limited(rng: np.random.Generator, n_frames: int, n_channels: int,
                  amp: float, fps: int) -> np.ndarray:
    """Per-channel sum of <=4 sinusoids with frequencies below ~1.5 Hz."""
    t = np.arange(n_frames)[:, None, None] / fps
    k = 4
    freqs = rng.uniform(0.1, 1.5, size=(1, n_channels, k))
    phases = rng.uniform(0.0, 2 * np.pi, size=(1, n_channels, k))
    amps = rng.uniform(0.1, 1.0, size=(1, n_channels, k)) * amp / k
    waves = amps * np.sin(2 * np.pi * freqs * t + phases)
    return waves.sum(axis=2)


def _gait_feet(positions: np.ndarray, layout: FeatureLayout, freq: float,
               phases: np.ndarray, offsets: np.ndarray, fps: int) -> None:
    """Overwrite foot-joint xyz with a rectified-sine gait: all three
    coordinates are constant while the foot height sits below the contact
    threshold."""
    n = positions.shape[0]
    t = np.arange(n) / fps
    for k, fj in enumerate(layout.foot_joints):
        phi = 2 * np.pi * freq * t + phases[k]
        swing = np.maximum(0.0, np.sin(phi))
        base = 3 * fj
        positions[:, base + 0] = offsets[k, 0] + 0.15 * swing * np.cos(phi)
        positions[:, base + 1] = STANCE_HEIGHT + STEP_LIFT * swing
        positions[:, base + 2] = offsets[k, 1] + 0.10 * swing * np.sin(0.5 * phi)


def _assemble_frames(layout: FeatureLayout, root_ang: np.ndarray, root_lin: np.ndarray,
                     root_h: np.ndarray, positions: np.ndarray,
                     rotations: np.ndarray) -> np.ndarray:
    """Build the full frame matrix, deriving velocities and contacts."""
    n = root_ang.shape[0]
    j = layout.n_joints
    frames = np.zeros((n, layout.dim), dtype=np.float64)
    frames[:, layout.slice_of("root_angular_velocity")] = root_ang
    frames[:, layout.slice_of("root_linear_velocity")] = root_lin
    frames[:, layout.slice_of("root_height")] = root_h
    frames[:, layout.slice_of("joint_positions")] = positions
    frames[:, layout.slice_of("joint_rotations")] = rotations

    # Root velocity from the root channels, non-root from position diffs.
    vel = np.zeros((n, j * 3))
    root_vel = np.zeros((n, 3))
    root_vel[:-1, 0] = root_lin[1:, 0] - root_lin[:-1, 0]
    root_vel[:-1, 1] = root_h[1:, 0] - root_h[:-1, 0]
    root_vel[:-1, 2] = root_lin[1:, 1] - root_lin[:-1, 1]
    pos_vel = np.zeros((n, (j - 1) * 3))
    pos_vel[:-1] = positions[1:] - positions[:-1]
    if n >= 2:
        root_vel[-1] = root_vel[-2]
        pos_vel[-1] = pos_vel[-2]
    vel[:, :3] = root_vel
    vel[:, 3:] = pos_vel
    frames[:, layout.slice_of("joint_velocities")] = vel

    foot_cols = layout.foot_position_columns()
    heights = frames[:, foot_cols[1::3]]  # y component of each foot joint
    frames[:, layout.slice_of("foot_contacts")] = (heights < CONTACT_HEIGHT).astype(np.float64)
    return frames.astype(np.float32)


def generate_clip(rng: np.random.Generator, layout: FeatureLayout,
                  n_frames: int, fps: int = DEFAULT_FPS) -> MotionSequence:
    j = layout.n_joints
    root_ang = _band_limited(rng, n_frames, 1, amp=0.2, fps=fps)
    root_lin = _band_limited(rng, n_frames, 2, amp=0.05, fps=fps)
    root_h = 0.9 + _band_limited(rng, n_frames, 1, amp=0.1, fps=fps)
    positions = _band_limited(rng, n_frames, (j - 1) * 3, amp=0.4, fps=fps)
    _gait_feet(
        positions, layout,
        freq=rng.uniform(0.6, 1.4),
        phases=rng.uniform(0, 2 * np.pi, size=len(layout.foot_joints)),
        offsets=rng.uniform(-0.2, 0.2, size=(len(layout.foot_joints), 2)),
        fps=fps,
    )
    rotations = _IDENTITY_6D[None, :].repeat(j - 1, axis=0).reshape(1, -1) + _band_limited(
        rng, n_frames, (j - 1) * 6, amp=0.3, fps=fps
    )
    frames = _assemble_frames(layout, root_ang, root_lin, root_h, positions, rotations)
    return MotionSequence(frames=frames, fps=fps, layout_id=layout.layout_id)


def generate_synthetic_dataset(
    out_dir: str | Path,
    n_clips: int,
    rng: np.random.Generator,
    layout: FeatureLayout = DESK_LAYOUT,
    min_frames: int = 60,
    max_frames: int = 240,
    fps: int = DEFAULT_FPS,
) -> DatasetIndex:
    """Write `n_clips` synthetic motion files and return their index."""
    if n_clips < 1:
        raise ValueError(f"n_clips must be >= 1, got {n_clips}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_clips):
        n_frames = int(rng.integers(min_frames, max_frames + 1))
        seq = generate_clip(rng, layout, n_frames, fps)
        write_motion_file(seq, out_dir / f"clip_{i:04d}.omgm")
    return build_dataset_index(out_dir)


# ---------------------------------------------------------------------------
# Paired text-motion generation.  Prompts name a tempo, a span, and two
# styles; the first style shapes the first half of the clip and the second
# style the second half, so different tokens genuinely control different
# time ranges.  Style patterns live on the root and joint-rotation
# channels; foot positions carry only the tempo-locked gait.

TEMPO_WORDS = {"slow": 0.5, "brisk": 1.0, "fast": 1.7}
SPAN_WORDS = {"small": 0.35, "wide": 1.0}
STYLE_WORDS = ("walk", "sway", "bounce", "twist", "reach")


def _rotation_groups(layout: FeatureLayout) -> list[np.ndarray]:
    total = (layout.n_joints - 1) * 6
    return [np.arange(total)[g::5] for g in range(5)]


def _style_signal(style: str, n: int, freq: float, amp: float,
                  layout: FeatureLayout, fps: int) -> dict[str, np.ndarray]:
    """Channel patterns characteristic of one style word."""
    t = np.arange(n) / fps
    wave = np.sin(2 * np.pi * freq * t)[:, None]
    j = layout.n_joints
    groups = _rotation_groups(layout)
    out = {
        "root_ang": np.zeros((n, 1)),
        "root_lin": np.zeros((n, 2)),
        "root_h": np.full((n, 1), 0.9),
        "rotations": np.zeros((n, (j - 1) * 6)),
    }
    idx = STYLE_WORDS.index(style)
    cols = groups[idx]
    if style == "walk":
        out["root_lin"][:, 0:1] = 0.04 * amp * (1 + wave)
        out["rotations"][:, cols] = 0.6 * amp * wave
    elif style == "sway":
        out["root_lin"][:, 1:2] = 0.05 * amp * wave
        out["rotations"][:, cols] = 0.5 * amp * wave + 0.3 * amp
    elif style == "bounce":
        out["root_h"] += 0.15 * amp * wave
        out["rotations"][:, cols] = 0.5 * amp * np.abs(wave) + 0.1
    elif style == "twist":
        out["root_ang"][:] = 0.6 * amp * wave
        out["rotations"][:, cols] = -0.45 * amp * wave + 0.15 * amp
    elif style == "reach":
        out["rotations"][:, cols] = 0.6 * amp * (0.5 + 0.5 * wave) + 0.25
    else:
        raise ValueError(f"unknown style {style!r}")
    return out


def generate_paired_clip(prompt: str, rng: np.random.Generator,
                         layout: FeatureLayout = DESK_LAYOUT, n_frames: int = 48,
                         fps: int = DEFAULT_FPS) -> MotionSequence:
    """Motion whose halves follow the two style words of the prompt."""
    words = prompt.split()
    tempo, span, style_a, _, style_b = words
    freq = TEMPO_WORDS[tempo]
    amp = SPAN_WORDS[span]
    half = n_frames // 2
    sig_a = _style_signal(style_a, n_frames, freq, amp, layout, fps)
    sig_b = _style_signal(style_b, n_frames, freq, amp, layout, fps)
    blend = np.clip((np.arange(n_frames) - half + 2.0) / 4.0, 0.0, 1.0)[:, None]

    def mix(key):
        return (1 - blend) * sig_a[key] + blend * sig_b[key]

    j = layout.n_joints
    positions = _band_limited(rng, n_frames, (j - 1) * 3, 0.03, fps)
    # gait phase is fixed so the foot channels are deterministic given the
    # prompt; per-clip variation comes from the band-limited noise only
    _gait_feet(
        positions, layout,
        freq=freq,
        phases=np.arange(len(layout.foot_joints)) * np.pi / 2,
        offsets=0.1 * np.stack([np.arange(len(layout.foot_joints)) - 1.5,
                                np.ones(len(layout.foot_joints))], axis=1),
        fps=fps,
    )
    rotations = (
        _IDENTITY_6D[None, :].repeat(j - 1, axis=0).reshape(1, -1)
        + mix("rotations")
        + _band_limited(rng, n_frames, (j - 1) * 6, 0.04, fps)
    )
    frames = _assemble_frames(
        layout,
        mix("root_ang") + _band_limited(rng, n_frames, 1, 0.02, fps),
        mix("root_lin") + _band_limited(rng, n_frames, 2, 0.01, fps),
        mix("root_h"),
        positions,
        rotations,
    )
    return MotionSequence(frames=frames, fps=fps, layout_id=layout.layout_id)


def sample_prompt(rng: np.random.Generator) -> str:
    tempo = list(TEMPO_WORDS)[rng.integers(len(TEMPO_WORDS))]
    span = list(SPAN_WORDS)[rng.integers(len(SPAN_WORDS))]
    a, b = rng.choice(len(STYLE_WORDS), size=2, replace=False)
    return f"{tempo} {span} {STYLE_WORDS[a]} then {STYLE_WORDS[b]}"


def generate_paired_dataset(
    out_dir: str | Path,
    n_pairs: int,
    rng: np.random.Generator,
    layout: FeatureLayout = DESK_LAYOUT,
    n_frames: int = 48,
    fps: int = DEFAULT_FPS,
) -> tuple[DatasetIndex, dict[str, str]]:
    """Write paired clips plus a prompts.json mapping clip_id -> prompt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prompts: dict[str, str] = {}
    for i in range(n_pairs):
        prompt = sample_prompt(rng)
        seq = generate_paired_clip(prompt, rng, layout, n_frames, fps)
        clip_id = f"pair_{i:04d}"
        write_motion_file(seq, out_dir / f"{clip_id}.omgm")
        prompts[clip_id] = prompt
    with open(out_dir / "prompts.json", "w", encoding="utf-8") as fh:
        json.dump(prompts, fh, indent=2, sort_keys=True)
    index = build_dataset_index(out_dir)
    return index, prompts


def load_prompts(data_dir: str | Path) -> dict[str, str]:
    with open(Path(data_dir) / "prompts.json", encoding="utf-8") as fh:
        return json.load(fh)
