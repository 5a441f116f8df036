"""Command line entry point: ``mectconv convert SRC DST [--pattern GLOB]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .convert import convert_tree


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mectconv",
        description="Convert HDF5 / MetaIO scan data to MSV, MSL and MSS containers.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    conv = sub.add_parser("convert", help="convert a file or directory tree")
    conv.add_argument("src", type=Path, help="source file or directory")
    conv.add_argument("dst", type=Path, help="output directory")
    conv.add_argument(
        "--pattern",
        default="*",
        help="glob applied to file names when SRC is a directory (default: *)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if not args.src.exists():
        print(f"error: {args.src}: no such file or directory", file=sys.stderr)
        return 2
    result = convert_tree(args.src, args.dst, args.pattern)
    print(
        f"wrote {len(result.entries)} output(s) from {args.src}"
        f" ({len(result.errors)} error(s))"
    )
    return 1 if result.errors else 0


if __name__ == "__main__":
    raise SystemExit(main())
