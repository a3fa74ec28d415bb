"""Desk-scale text-to-motion diffusion pipeline.

Unconditional pre-training on unlabeled motion, conditional fine-tuning
with per-layer mixture-of-controllers blocks, classifier-free-guided DDIM
sampling, and distribution / retrieval metrics.
"""

from .backbone import DenoiserParams, ModelConfig, count_params, denoise, init_params, preset_config
from .data import (
    DESK_LAYOUT,
    HUMANML_LAYOUT,
    DatasetIndex,
    FeatureLayout,
    MotionSequence,
    WindowSample,
    batch_windows,
    build_dataset_index,
    read_motion_file,
    sample_window,
    write_motion_file,
)
from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    build_cosine_schedule,
    ddim_step,
    forward_noise,
    sample,
)
from .losses import LossReport, LossWeights, loss_foot_contact, loss_simple, loss_velocity, total_loss
from .moc import MoCConfig
from .text import (
    FileEmbeddingProvider,
    StubEmbeddingProvider,
    TextConditioning,
    eos_dropout,
    load_embedding_file,
    write_embedding_file,
)

__version__ = "0.1.0"
