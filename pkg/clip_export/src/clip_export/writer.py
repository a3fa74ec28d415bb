"""Binary `.omge` writer.

Wire format (little-endian): magic "OMGE", version u32=1, record count u32;
per record: prompt-hash u64 (FNV-1a over UTF-8), n u16, d_c u16,
eos_index u16, then n x d_c float32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"OMGE"
EMBED_VERSION = 1
EMBED_DIM = 768
MAX_TOKENS = 77

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 1 << 64


def fnv1a_64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) % _U64
    return h


@dataclass
class EmbeddingRecord:
    prompt: str
    embeddings: np.ndarray  # (n, EMBED_DIM) float32
    eos_index: int

    def validate(self) -> None:
        n, d = self.embeddings.shape
        if not 1 <= n <= MAX_TOKENS:
            raise ValueError(f"{self.prompt!r}: {n} tokens outside [1, {MAX_TOKENS}]")
        if d != EMBED_DIM:
            raise ValueError(f"{self.prompt!r}: embedding dim {d} != {EMBED_DIM}")
        if not 0 <= self.eos_index < n:
            raise ValueError(f"{self.prompt!r}: eos_index {self.eos_index} outside [0, {n})")
        if not np.isfinite(self.embeddings).all():
            raise ValueError(f"{self.prompt!r}: non-finite embedding values")


def write_omge(records: list[EmbeddingRecord], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<2I", EMBED_VERSION, len(records)))
        for record in records:
            record.validate()
            emb = np.ascontiguousarray(record.embeddings, dtype="<f4")
            n, d = emb.shape
            fh.write(struct.pack("<Q3H", fnv1a_64(record.prompt), n, d, record.eos_index))
            fh.write(emb.tobytes())
