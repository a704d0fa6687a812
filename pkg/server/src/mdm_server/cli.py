"""Command-line entry point for the prediction server."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .server import ServerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdm-model-server",
        description="Serve masked-token predictions over newline-delimited JSON.",
    )
    parser.add_argument(
        "--backend",
        choices=["stub", "checkpoint"],
        default="stub",
        help="stub: deterministic test distributions; checkpoint: a real model",
    )
    parser.add_argument(
        "--checkpoint",
        default=None,
        help="model identifier or path (checkpoint backend)",
    )
    parser.add_argument(
        "--listen",
        default="127.0.0.1:9155",
        help="host:port to bind, or 'stdio' (default %(default)s)",
    )
    parser.add_argument(
        "--top-k",
        type=int,
        default=64,
        help="cap on per-position distribution entries (default %(default)s)",
    )
    parser.add_argument(
        "--vocab-size",
        type=int,
        default=16,
        help="stub backend vocabulary size (default %(default)s)",
    )
    parser.add_argument(
        "--request-log",
        type=Path,
        default=None,
        help="append raw request frames to this file",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ServerConfig(
            backend=args.backend,
            checkpoint=args.checkpoint,
            listen=args.listen,
            top_k_cap=args.top_k,
            vocab_size=args.vocab_size,
            request_log=args.request_log,
        )
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        serve(config)
    except KeyboardInterrupt:
        pass
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
