"""viz <kind> <input> <output.png> [--azimuth A --elevation E --title T]"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .io import ParseError
from .render import KINDS, RenderJob, render

EXIT_OK = 0
EXIT_PARSE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viz",
        description="Render foldtear output files (CSV/PLY/OBJ) to PNG.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("input", help="CSV (loss/grid/dk), PLY (cloud), "
                                      "or OBJ (mesh) file")
    parser.add_argument("output", help="output PNG path")
    parser.add_argument("--azimuth", type=float, default=30.0,
                        help="camera azimuth in degrees (3D kinds)")
    parser.add_argument("--elevation", type=float, default=20.0,
                        help="camera elevation in degrees (3D kinds)")
    parser.add_argument("--title")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = RenderJob(kind=args.kind, input_path=args.input,
                    output_path=args.output, azimuth=args.azimuth,
                    elevation=args.elevation, title=args.title)
    try:
        render(job)
    except (ParseError, FileNotFoundError, OSError) as exc:
        print(f"viz: {exc}", file=sys.stderr)
        return EXIT_PARSE
    print(f"viz: wrote {args.output}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
