"""Motion representation, bit-exact file I/O, and the sliding-random-window sampler.

A motion sequence is a matrix of per-frame feature vectors.  The feature
vector is over-parameterized: root motion, joint positions, 6D joint
rotations, joint velocities, and binary foot-contact labels live in named
contiguous slices described by a :class:`FeatureLayout`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyDatasetError,
    LayoutMismatchError,
    LayoutMissingFeetError,
    NonFiniteValueError,
)

MOTION_MAGIC = b"OMGM"
MOTION_VERSION = 1
HEADER_BYTES = 24  # magic + 5 * u32
DEFAULT_FPS = 30


@dataclass(frozen=True)
class FeatureLayout:
    """Named contiguous slices over the per-frame feature vector.

    Slice order is fixed: root angular velocity (1), root linear velocity
    on the ground plane (2), root height (1), root-relative joint
    positions ((J-1)*3), 6D joint rotations ((J-1)*6), joint velocities
    (J*3), foot contacts (4, always last).
    """

    layout_id: int
    n_joints: int
    foot_joints: tuple[int, ...] = ()  # indices into the non-root joint list

    @property
    def dim(self) -> int:
        j = self.n_joints
        return 1 + 2 + 1 + (j - 1) * 3 + (j - 1) * 6 + j * 3 + 4

    def _offsets(self) -> dict[str, tuple[int, int]]:
        j = self.n_joints
        sizes = {
            "root_angular_velocity": 1,
            "root_linear_velocity": 2,
            "root_height": 1,
            "joint_positions": (j - 1) * 3,
            "joint_rotations": (j - 1) * 6,
            "joint_velocities": j * 3,
            "foot_contacts": 4,
        }
        out = {}
        start = 0
        for name, size in sizes.items():
            out[name] = (start, start + size)
            start += size
        return out

    def slice_of(self, name: str) -> slice:
        lo, hi = self._offsets()[name]
        return slice(lo, hi)

    def validate(self) -> None:
        if self.n_joints < 2:
            raise DimensionMismatchError(f"need at least 2 joints, got {self.n_joints}")
        offsets = self._offsets()
        pos = 0
        for name, (lo, hi) in offsets.items():
            if lo != pos:
                raise DimensionMismatchError(f"slice {name} is not contiguous")
            pos = hi
        if pos != self.dim:
            raise DimensionMismatchError("slice sizes do not sum to total dimension")
        lo, hi = offsets["foot_contacts"]
        if hi != self.dim or hi - lo != 4:
            raise DimensionMismatchError("foot_contacts must be the final 4 dims")
        for fj in self.foot_joints:
            if not 0 <= fj < self.n_joints - 1:
                raise LayoutMissingFeetError(f"foot joint {fj} outside non-root joint range")

    def foot_position_columns(self) -> np.ndarray:
        """Column indices (into the frame vector) of the foot joints' xyz positions."""
        if len(self.foot_joints) != 4:
            raise LayoutMissingFeetError(
                f"layout {self.layout_id} defines {len(self.foot_joints)} foot joints, need 4"
            )
        base = self.slice_of("joint_positions").start
        cols = [base + 3 * fj + axis for fj in self.foot_joints for axis in range(3)]
        return np.asarray(cols, dtype=np.int64)


# Default layout follows the 22-joint / 263-dim convention common in
# text-to-motion work; the desk layout keeps tests fast.
HUMANML_LAYOUT = FeatureLayout(layout_id=0, n_joints=22, foot_joints=(6, 9, 7, 10))
DESK_LAYOUT = FeatureLayout(layout_id=1, n_joints=5, foot_joints=(0, 1, 2, 3))

_LAYOUTS = {layout.layout_id: layout for layout in (HUMANML_LAYOUT, DESK_LAYOUT)}


def get_layout(layout_id: int) -> FeatureLayout:
    try:
        return _LAYOUTS[layout_id]
    except KeyError:
        raise DimensionMismatchError(f"unknown layout_id {layout_id}") from None


def register_layout(layout: FeatureLayout) -> None:
    layout.validate()
    _LAYOUTS[layout.layout_id] = layout


@dataclass
class MotionSequence:
    """Frames of per-frame features at a fixed frame rate."""

    frames: np.ndarray  # (n_frames, D) float32
    fps: int
    layout_id: int

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def layout(self) -> FeatureLayout:
        return get_layout(self.layout_id)

    def validate(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DimensionMismatchError(f"frames must be (n>=1, D), got {self.frames.shape}")
        layout = self.layout
        if self.frames.shape[1] != layout.dim:
            raise DimensionMismatchError(
                f"frame dim {self.frames.shape[1]} != layout dim {layout.dim}"
            )
        if not np.isfinite(self.frames).all():
            bad = np.argwhere(~np.isfinite(self.frames))[0]
            raise NonFiniteValueError(f"non-finite value at frame {bad[0]}, feature {bad[1]}")
        contacts = self.frames[:, layout.slice_of("foot_contacts")]
        if contacts.min() < 0.0 or contacts.max() > 1.0:
            raise NonFiniteValueError("foot contact entries must lie in [0, 1]")


def write_motion_file(seq: MotionSequence, path: str | Path) -> None:
    """Serialize a sequence; the file round-trips bit-exactly."""
    seq.validate()
    data = np.ascontiguousarray(seq.frames, dtype="<f4")
    header = MOTION_MAGIC + struct.pack(
        "<5I", MOTION_VERSION, seq.fps, seq.n_frames, data.shape[1], seq.layout_id
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_motion_file(path: str | Path) -> MotionSequence:
    """Load and validate a `.omgm` motion file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_BYTES or raw[:4] != MOTION_MAGIC:
        raise BadMagicError(f"{path}: not a motion file")
    version, fps, n_frames, dim, layout_id = struct.unpack("<5I", raw[4:HEADER_BYTES])
    if version != MOTION_VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")
    layout = get_layout(layout_id)
    if dim != layout.dim:
        raise DimensionMismatchError(
            f"{path}: header D={dim} does not match layout {layout_id} (D={layout.dim})"
        )
    expected = HEADER_BYTES + 4 * n_frames * dim
    if len(raw) != expected:
        raise DimensionMismatchError(f"{path}: expected {expected} bytes, found {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", offset=HEADER_BYTES).reshape(n_frames, dim).copy()
    seq = MotionSequence(frames=frames, fps=fps, layout_id=layout_id)
    seq.validate()
    return seq


@dataclass
class WindowSample:
    """A cropped sub-sequence used as one training example."""

    clip_id: str
    start: int
    data: np.ndarray  # (len, D)
    layout_id: int

    @property
    def length(self) -> int:
        return int(self.data.shape[0])


@dataclass
class ClipEntry:
    clip_id: str
    n_frames: int
    path: Path
    payload_offset: int = HEADER_BYTES


@dataclass
class DatasetIndex:
    """Index over a directory of motion files, with frames cached in memory."""

    clips: list[ClipEntry]
    layout_id: int
    fps: int
    total_frames: int
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def clip_frames(self, entry: ClipEntry) -> np.ndarray:
        cached = self._cache.get(entry.clip_id)
        if cached is None:
            cached = read_motion_file(entry.path).frames
            self._cache[entry.clip_id] = cached
        return cached


def build_dataset_index(data_dir: str | Path) -> DatasetIndex:
    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.omgm"))
    if not paths:
        raise EmptyDatasetError(f"no .omgm files in {data_dir}")
    clips = []
    layout_id = None
    fps = None
    total = 0
    for path in paths:
        seq = read_motion_file(path)
        if layout_id is None:
            layout_id, fps = seq.layout_id, seq.fps
        elif seq.layout_id != layout_id:
            raise LayoutMismatchError(f"{path}: layout {seq.layout_id} != {layout_id}")
        clips.append(ClipEntry(clip_id=path.stem, n_frames=seq.n_frames, path=path))
        total += seq.n_frames
    index = DatasetIndex(clips=clips, layout_id=layout_id, fps=fps, total_frames=total)
    for entry, path in zip(index.clips, paths):
        index._cache[entry.clip_id] = read_motion_file(path).frames
    return index


def draw_window_length(rng: np.random.Generator, upper: int) -> int:
    """Window length l ~ U[1, upper]."""
    return int(rng.integers(1, upper + 1))


def sample_window(index: DatasetIndex, rng: np.random.Generator, l_max: int) -> WindowSample:
    """Crop a random window: uniform start frame over the whole dataset,
    then l ~ U[1, min(l_max, frames remaining in the clip)]."""
    if l_max < 1:
        raise ValueError(f"l_max must be >= 1, got {l_max}")
    if not index.clips or index.total_frames <= 0:
        raise EmptyDatasetError("dataset has no frames")
    flat = int(rng.integers(0, index.total_frames))
    for entry in index.clips:
        if flat < entry.n_frames:
            start = flat
            break
        flat -= entry.n_frames
    length = draw_window_length(rng, min(l_max, entry.n_frames - start))
    frames = index.clip_frames(entry)[start : start + length]
    return WindowSample(
        clip_id=entry.clip_id, start=start, data=frames, layout_id=index.layout_id
    )


def batch_windows(
    samples: list[WindowSample], pad_to: int
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad samples into a (B, pad_to, D) batch plus a binary validity mask."""
    if not samples:
        raise EmptyDatasetError("cannot batch zero samples")
    layout_ids = {s.layout_id for s in samples}
    if len(layout_ids) > 1:
        raise LayoutMismatchError(f"mixed layouts in batch: {sorted(layout_ids)}")
    max_len = max(s.length for s in samples)
    if pad_to < max_len:
        raise ValueError(f"pad_to={pad_to} shorter than longest sample ({max_len})")
    dim = samples[0].data.shape[1]
    batch = np.zeros((len(samples), pad_to, dim), dtype=np.float32)
    mask = np.zeros((len(samples), pad_to), dtype=np.float32)
    for i, s in enumerate(samples):
        batch[i, : s.length] = s.data
        mask[i, : s.length] = 1.0
    return batch, mask


def resample_fps(seq: MotionSequence, target_fps: int) -> MotionSequence:
    """Linear per-channel resampling to the standard frame rate."""
    if seq.fps == target_fps:
        return seq
    n = seq.n_frames
    duration = (n - 1) / seq.fps
    m = max(1, int(round(duration * target_fps)) + 1)
    src_t = np.arange(n) / seq.fps
    dst_t = np.arange(m) / target_fps
    frames = np.empty((m, seq.frames.shape[1]), dtype=np.float32)
    for c in range(seq.frames.shape[1]):
        frames[:, c] = np.interp(dst_t, src_t, seq.frames[:, c])
    contacts = seq.layout.slice_of("foot_contacts")
    frames[:, contacts] = np.clip(np.round(frames[:, contacts]), 0.0, 1.0)
    return MotionSequence(frames=frames, fps=target_fps, layout_id=seq.layout_id)
