"""Command line for the embedding extractor.

``embed-extract extract --backbone <name> --images <dir> [--labels <file>]
--out <path.embv>`` plus ``embed-extract backbones`` to list what the
registry offers.
"""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractError, ExtractJob, extract
from .registry import REGISTRY, BackboneUnavailable


def build_parser():
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="Write frozen vision-backbone embeddings of an image "
                    "folder as an EMBVIEW1 file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="embed an image folder")
    p_ext.add_argument("--backbone", required=True)
    p_ext.add_argument("--images", required=True, help="image directory")
    p_ext.add_argument("--labels", default=None,
                       help="sidecar file: relative/path<TAB>class_index")
    p_ext.add_argument("--out", required=True, help="output .embv path")
    p_ext.add_argument("--batch-size", type=int, default=32)
    p_ext.add_argument("--on-error", choices=("abort", "skip"),
                       default="abort",
                       help="what to do with unreadable images")

    sub.add_parser("backbones", help="list available backbones")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "backbones":
            for name in sorted(REGISTRY):
                print(name)
            return 0
        job = ExtractJob(backbone=args.backbone, image_dir=args.images,
                         output_path=args.out, label_file=args.labels,
                         batch_size=args.batch_size, on_error=args.on_error)
        manifest = extract(job)
        print(f"wrote {args.out}: {len(manifest['rows'])} rows x "
              f"{manifest['dim']} dims "
              f"({'labeled' if manifest['labeled'] else 'unlabeled'})")
        return 0
    except BackboneUnavailable as e:
        print(f"backbone error: {e}", file=sys.stderr)
        return 2
    except ExtractError as e:
        print(f"extract error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
