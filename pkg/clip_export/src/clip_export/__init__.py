"""Offline text-embedding exporter.

Tokenizes prompts with a frozen CLIP text encoder, extracts per-token
embeddings at the final layer normalization, and writes them to the binary
`.omge` file consumed by the motion-generation pipeline.
"""

from .export import ExportManifest, export_embeddings
from .writer import EMBED_DIM, MAX_TOKENS, EmbeddingRecord, fnv1a_64, write_omge

__version__ = "0.1.0"
