"""Command line entry points: convert and inspect."""

from __future__ import annotations

import argparse
import json
import sys

from .sofa import SofaError, convert, inspect


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sofa2hrd1",
        description="Convert SOFA HRTF files to the HRD1 portable format.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="write an HRD1 file")
    p.add_argument("input", help="path to the .sofa file")
    p.add_argument("output", help="path of the HRD1 file to write")
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--subject-id", default=None,
                   help="defaults to the input filename stem")

    p = sub.add_parser("inspect", help="print a JSON summary")
    p.add_argument("input", help="path to the .sofa file")

    args = parser.parse_args(argv)
    try:
        if args.command == "convert":
            summary = convert(args.input, args.output, args.dataset_id,
                              args.subject_id)
            print(f"wrote {args.output} "
                  f"({summary.n_measurements} directions, "
                  f"{summary.sample_rate_hz:g} Hz)")
        else:
            print(inspect(args.input).to_json())
        return 0
    except SofaError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
