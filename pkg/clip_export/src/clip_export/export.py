"""Batch export: prompts file in, `.omge` file out."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .writer import EMBED_DIM, MAX_TOKENS, EmbeddingRecord, write_omge


@dataclass
class ExportManifest:
    model_id: str
    prompts: list[str]
    output: Path
    embed_dim: int = EMBED_DIM
    max_tokens: int = MAX_TOKENS
    failed: list[str] = field(default_factory=list)


def read_prompts(path: str | Path) -> list[str]:
    """One prompt per line; blank lines ignored; order-preserving dedup."""
    seen = set()
    prompts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        prompt = line.strip()
        if prompt and prompt not in seen:
            seen.add(prompt)
            prompts.append(prompt)
    return prompts


def export_embeddings(
    prompts: list[str],
    output: str | Path,
    encoder,
    model_id: str = "unknown",
    warn=lambda msg: print(msg, file=sys.stderr),
) -> ExportManifest:
    """Encode every unique prompt and write the records.

    The empty-prompt record always comes first: its end-of-sequence row
    defines the empty token used for conditioning dropout downstream.
    Prompts that fail to encode are skipped with a warning.
    """
    manifest = ExportManifest(model_id=model_id, prompts=list(prompts), output=Path(output))
    records: list[EmbeddingRecord] = []
    emb, eos = encoder.encode("")
    records.append(EmbeddingRecord(prompt="", embeddings=emb, eos_index=eos))
    for prompt in prompts:
        if prompt == "":
            continue
        try:
            emb, eos = encoder.encode(prompt)
            records.append(EmbeddingRecord(prompt=prompt, embeddings=emb, eos_index=eos))
        except Exception as exc:  # per-prompt failures must not kill the batch
            warn(f"skipping {prompt!r}: {exc}")
            manifest.failed.append(prompt)
    if len(records) == 1 and prompts:
        raise RuntimeError("every prompt failed to encode")
    write_omge(records, output)
    return manifest
