"""Command-line export: hub model id + image + instruction -> manifest."""

from __future__ import annotations

import argparse
import sys

from .adapter import DEFAULT_LAYER, export_features, from_pretrained


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lens-extract")
    parser.add_argument("--model", required=True, help="hub id of the vision-language model")
    parser.add_argument("--seg-model", required=True, help="hub id of the segmentation encoder")
    parser.add_argument("--image", required=True)
    parser.add_argument("--instruction", required=True)
    parser.add_argument("--layer", type=int, default=DEFAULT_LAYER)
    parser.add_argument("--out-dir", default=".")
    args = parser.parse_args(argv)
    try:
        components, seg = from_pretrained(args.model, args.seg_model)
        manifest = export_features(components, args.image, args.instruction,
                                   seg, layer=args.layer, out_dir=args.out_dir)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported L_i={manifest['L_i']} L_t={manifest['L_t']} d={manifest['d']} "
          f"to {args.out_dir}/manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
