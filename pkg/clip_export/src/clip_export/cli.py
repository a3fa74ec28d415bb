"""CLI: clip-export --prompts FILE --out FILE [--model ID | --hash-encoder]"""

from __future__ import annotations

import argparse
import sys

from .encoder import DEFAULT_MODEL, ClipTextEncoder, HashEncoder, ModelUnavailableError
from .export import export_embeddings, read_prompts


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clip-export")
    parser.add_argument("--prompts", required=True, help="text file, one prompt per line")
    parser.add_argument("--out", required=True, help="output .omge path")
    parser.add_argument("--model", default=DEFAULT_MODEL, help="HF model id")
    parser.add_argument(
        "--hash-encoder", action="store_true",
        help="use the deterministic model-free encoder instead of CLIP",
    )
    args = parser.parse_args(argv)

    prompts = read_prompts(args.prompts)
    if args.hash_encoder:
        encoder = HashEncoder()
        model_id = "hash"
    else:
        try:
            encoder = ClipTextEncoder(args.model)
        except ModelUnavailableError as exc:
            print(f"model unavailable: {exc}", file=sys.stderr)
            return 3
        model_id = args.model
    try:
        manifest = export_embeddings(prompts, args.out, encoder, model_id=model_id)
    except RuntimeError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    written = 1 + len(prompts) - len(manifest.failed)
    print(f"wrote {written} records ({len(manifest.failed)} failed) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
