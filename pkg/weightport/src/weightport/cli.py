"""CLI: weightport export --checkpoint F --out F [--activations IMG OUT]"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, export_reference_activations, export_weights


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="weightport", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    p = sub.add_parser("export", help="convert a checkpoint to SPWF")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--activations", nargs=2, metavar=("IMG", "OUT"))
    args = parser.parse_args(argv)
    if args.command != "export":
        parser.print_help()
        return 1
    try:
        manifest = export_weights(args.checkpoint, args.out)
        print(f"wrote {args.out} (source sha256 {manifest.source_sha256[:12]}...)")
        if args.activations:
            img, out = args.activations
            export_reference_activations(args.checkpoint, img, out)
            print(f"wrote {out}")
        return 0
    except (ExportError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
