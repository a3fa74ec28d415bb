"""Per-token text embeddings through a provider interface.

Two providers: a binary embedding-file loader (files produced offline by a
real text encoder) and a deterministic stub that hashes token text into
unit-normalized vectors, so the whole pipeline runs without any model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyPromptError,
    NonFiniteValueError,
    TokenOverflowError,
    UnknownPromptError,
)

EMBED_DIM = 768
MAX_TOKENS = 77
EMBED_MAGIC = b"OMGE"
EMBED_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 1 << 64


def fnv1a_64(text: str) -> int:
    """FNV-1a over the UTF-8 encoding; stable across platforms."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) % _U64
    return h


@dataclass
class TextConditioning:
    """Token embeddings plus the end-of-sequence position and validity mask."""

    embeddings: np.ndarray  # (n, d_c) float32
    eos_index: int
    token_mask: np.ndarray  # (n,) float32
    source: str = "stub"

    @property
    def n_tokens(self) -> int:
        return int(self.embeddings.shape[0])

    def validate(self) -> None:
        n = self.n_tokens
        if n < 1:
            raise EmptyPromptError("conditioning needs at least one token")
        if n > MAX_TOKENS:
            raise TokenOverflowError(f"{n} tokens exceeds the maximum of {MAX_TOKENS}")
        if not 0 <= self.eos_index < n:
            raise DimensionMismatchError(f"eos_index {self.eos_index} outside [0, {n})")
        if self.token_mask.shape != (n,):
            raise DimensionMismatchError("token_mask must have one entry per token")
        if not np.isfinite(self.embeddings).all():
            raise NonFiniteValueError("conditioning embeddings contain NaN/Inf")


def _hash_vector(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(fnv1a_64(text)))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


class StubEmbeddingProvider:
    """Whitespace tokenizer + hash-seeded unit vectors.

    The synthetic end-of-sequence token is embedded from the hash of the
    whole (space-joined) prompt so it summarizes the text; the empty prompt
    therefore hashes the empty string, which defines the empty token.
    """

    source = "stub"

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            v = _hash_vector(token, self.dim)
            self._cache[token] = v
        return v

    def embed(self, prompt: str) -> TextConditioning:
        tokens = prompt.split()
        if not tokens:
            raise EmptyPromptError("prompt contains no tokens")
        tokens = tokens[: MAX_TOKENS - 1]
        rows = [self._token_vector(tok) for tok in tokens]
        rows.append(self._token_vector(" ".join(tokens)))
        emb = np.stack(rows, axis=0)
        cond = TextConditioning(
            embeddings=emb,
            eos_index=len(rows) - 1,
            token_mask=np.ones(len(rows), dtype=np.float32),
            source=self.source,
        )
        cond.validate()
        return cond

    def empty_token(self) -> np.ndarray:
        return self._token_vector("")


# ---------------------------------------------------------------------------
# binary embedding files

def write_embedding_file(records: dict[str, TextConditioning], path: str | Path) -> None:
    """Serialize prompt-keyed conditioning records (records keyed by hash on disk)."""
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<2I", EMBED_VERSION, len(records)))
        for prompt, cond in records.items():
            cond.validate()
            emb = np.ascontiguousarray(cond.embeddings, dtype="<f4")
            n, d_c = emb.shape
            fh.write(struct.pack("<Q3H", fnv1a_64(prompt), n, d_c, cond.eos_index))
            fh.write(emb.tobytes())


def load_embedding_file(path: str | Path) -> dict[int, TextConditioning]:
    """Load a `.omge` file into a prompt-hash -> conditioning map."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != EMBED_MAGIC:
        raise BadMagicError(f"{path}: not an embedding file")
    version, count = struct.unpack("<2I", raw[4:12])
    if version != EMBED_VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")
    offset = 12
    out: dict[int, TextConditioning] = {}
    for _ in range(count):
        prompt_hash, n, d_c, eos_index = struct.unpack_from("<Q3H", raw, offset)
        offset += 14
        if n > MAX_TOKENS:
            raise TokenOverflowError(f"{path}: record has {n} tokens (max {MAX_TOKENS})")
        if d_c != EMBED_DIM:
            raise DimensionMismatchError(f"{path}: d_c={d_c}, expected {EMBED_DIM}")
        emb = np.frombuffer(raw, dtype="<f4", count=n * d_c, offset=offset)
        offset += 4 * n * d_c
        cond = TextConditioning(
            embeddings=emb.reshape(n, d_c).copy(),
            eos_index=eos_index,
            token_mask=np.ones(n, dtype=np.float32),
            source="file",
        )
        cond.validate()
        out[prompt_hash] = cond
    if offset != len(raw):
        raise DimensionMismatchError(f"{path}: trailing bytes after last record")
    return out


class FileEmbeddingProvider:
    """Conditioning looked up by prompt hash from a `.omge` file."""

    source = "file"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records = load_embedding_file(path)

    def embed(self, prompt: str) -> TextConditioning:
        key = fnv1a_64(prompt)
        if key not in self.records:
            raise UnknownPromptError(f"prompt not in {self.path}: {prompt!r}")
        return self.records[key]

    def empty_token(self) -> np.ndarray:
        key = fnv1a_64("")
        if key not in self.records:
            raise UnknownPromptError(f"{self.path} lacks the empty-prompt record")
        rec = self.records[key]
        return rec.embeddings[rec.eos_index]


def eos_dropout(
    cond: TextConditioning,
    empty_token: np.ndarray,
    rng: np.random.Generator,
    p: float = 0.5,
) -> TextConditioning:
    """With probability p, replace the end-of-sequence embedding with the
    empty token; training-time augmentation only."""
    if p > 0.0 and rng.uniform() < p:
        emb = cond.embeddings.copy()
        emb[cond.eos_index] = empty_token
        return TextConditioning(
            embeddings=emb,
            eos_index=cond.eos_index,
            token_mask=cond.token_mask,
            source=cond.source,
        )
    return cond


@dataclass
class BatchedConditioning:
    """Token-padded batch of conditioning records."""

    embeddings: np.ndarray  # (B, n_max, d_c)
    token_mask: np.ndarray  # (B, n_max)
    eos_index: np.ndarray  # (B,)
    conds: list[TextConditioning] = field(default_factory=list, repr=False)

    @classmethod
    def from_list(cls, conds: list[TextConditioning]) -> "BatchedConditioning":
        n_max = max(c.n_tokens for c in conds)
        d_c = conds[0].embeddings.shape[1]
        emb = np.zeros((len(conds), n_max, d_c), dtype=np.float32)
        mask = np.zeros((len(conds), n_max), dtype=np.float32)
        eos = np.zeros(len(conds), dtype=np.int64)
        for i, c in enumerate(conds):
            emb[i, : c.n_tokens] = c.embeddings
            mask[i, : c.n_tokens] = c.token_mask
            eos[i] = c.eos_index
        return cls(embeddings=emb, token_mask=mask, eos_index=eos, conds=conds)

    def astype(self, dtype) -> "BatchedConditioning":
        return BatchedConditioning(
            embeddings=self.embeddings.astype(dtype),
            token_mask=self.token_mask.astype(dtype),
            eos_index=self.eos_index,
            conds=self.conds,
        )
