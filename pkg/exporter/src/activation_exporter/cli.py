"""Command-line front end: `activation-export export`.

Exit codes: 0 on success, 2 on bad input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExporterError, ExportSpec, export_activations
from .model import MODELS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activation-export",
        description="Dump post-activation tensors into the shared container format.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run a seeded model and write a container")
    p.add_argument("--model", required=True,
                   help=f"model id ({', '.join(sorted(MODELS))})")
    p.add_argument("--layers", required=True,
                   help="comma-separated capture point names, in layer order")
    p.add_argument("--num-samples", type=int, required=True,
                   help="how many inputs of the canonical stream to run")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def cmd_export(args) -> int:
    captures = tuple(s.strip() for s in args.layers.split(",") if s.strip())
    spec = ExportSpec(model_id=args.model, captures=captures,
                      num_samples=args.num_samples, out_dir=Path(args.out))
    out = export_activations(spec)
    for i, name in enumerate(spec.captures, start=1):
        print(f"layer_{i}\t{name}")
    print(out / "manifest.txt")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return cmd_export(args)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
