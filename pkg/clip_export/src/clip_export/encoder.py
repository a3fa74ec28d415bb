"""Token-embedding encoders.

The production encoder wraps the frozen CLIP-ViT-L/14 text tower and reads
per-token states at the final layer normalization.  Anything implementing
`encode(prompt) -> (embeddings, eos_index)` plugs into the exporter, which
keeps the pipeline testable without the model weights.
"""

from __future__ import annotations

import numpy as np

from .writer import EMBED_DIM, MAX_TOKENS

DEFAULT_MODEL = "openai/clip-vit-large-patch14"


class ModelUnavailableError(RuntimeError):
    pass


class ClipTextEncoder:
    """Frozen CLIP text tower; embeddings taken after the final layer norm."""

    def __init__(self, model_id: str = DEFAULT_MODEL):
        try:
            import torch
            from transformers import CLIPTextModel, CLIPTokenizerFast
        except ImportError as exc:
            raise ModelUnavailableError(
                "transformers/torch are not installed; install the [model] extra"
            ) from exc
        try:
            self.tokenizer = CLIPTokenizerFast.from_pretrained(model_id)
            self.model = CLIPTextModel.from_pretrained(model_id)
        except Exception as exc:
            raise ModelUnavailableError(f"could not load {model_id}: {exc}") from exc
        self.model.eval()
        self._torch = torch

    def encode(self, prompt: str) -> tuple[np.ndarray, int]:
        torch = self._torch
        inputs = self.tokenizer(
            prompt, truncation=True, max_length=MAX_TOKENS, return_tensors="pt"
        )
        with torch.no_grad():
            # last_hidden_state is post final-layer-norm for the CLIP text tower
            states = self.model(**inputs).last_hidden_state[0]
        ids = inputs["input_ids"][0]
        eos_positions = (ids == self.tokenizer.eos_token_id).nonzero()
        eos_index = int(eos_positions[0, 0]) if len(eos_positions) else int(ids.shape[0] - 1)
        emb = states.float().cpu().numpy().astype(np.float32)
        if emb.shape[1] != EMBED_DIM:
            raise ModelUnavailableError(
                f"{emb.shape[1]}-dim encoder; the format requires {EMBED_DIM}"
            )
        return emb, eos_index


class HashEncoder:
    """Deterministic model-free stand-in with CLIP-like token geometry.

    Whitespace tokens plus begin/end markers, each embedded from a hash-
    seeded unit vector.  Used by the test suite and as an explicit opt-in
    (`--hash-encoder`) when the real model cannot be downloaded.
    """

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def _vector(self, text: str) -> np.ndarray:
        from .writer import fnv1a_64

        rng = np.random.Generator(np.random.PCG64(fnv1a_64(text)))
        v = rng.standard_normal(self.dim)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def encode(self, prompt: str) -> tuple[np.ndarray, int]:
        words = prompt.split()
        tokens = ["<bos>"] + words[: MAX_TOKENS - 2]
        rows = [self._vector(tok) for tok in tokens]
        rows.append(self._vector(" ".join(words)))
        emb = np.stack(rows, axis=0)
        return emb, emb.shape[0] - 1
