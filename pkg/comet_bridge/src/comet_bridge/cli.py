"""CLI for the bridge. Exit codes: 0 ok, 1 validation error, 2 runtime error."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from comet_bridge.scorer import LEXICAL_MODEL, BridgeError, score_file

DEFAULT_COMET = "Unbabel/wmt22-comet-da"
DEFAULT_KIWI = "Unbabel/wmt22-cometkiwi-da"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="comet-bridge",
        description="Score translation triples (JSONL) into a segment_id/comet/kiwi TSV.",
    )
    parser.add_argument("--input", required=True, type=Path, help="triples JSONL")
    parser.add_argument("--output", required=True, type=Path, help="TSV to write")
    parser.add_argument(
        "--comet-model",
        default=DEFAULT_COMET,
        help=f"checkpoint id, '{LEXICAL_MODEL}', or 'none' (default: {DEFAULT_COMET})",
    )
    parser.add_argument(
        "--kiwi-model",
        default=DEFAULT_KIWI,
        help=f"checkpoint id, '{LEXICAL_MODEL}', or 'none' (default: {DEFAULT_KIWI})",
    )
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    if not args.input.exists():
        print(f"comet-bridge: input not found: {args.input}", file=sys.stderr)
        return 1
    if args.batch_size < 1:
        print("comet-bridge: --batch-size must be >= 1", file=sys.stderr)
        return 1
    try:
        stats = score_file(
            args.input,
            args.output,
            comet_model=args.comet_model,
            kiwi_model=args.kiwi_model,
            batch_size=args.batch_size,
        )
    except BridgeError as exc:
        print(f"comet-bridge: {exc.code}: {exc}", file=sys.stderr)
        return 1 if exc.code in ("no_model",) else 2
    print(
        f"comet-bridge: {stats['rows']} rows scored "
        f"({stats['skipped']} skipped) -> {stats['output']}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
