"""Command-line entry for the feature extractor."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .extract import FeatureJob, extract_features


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="resnetfeat",
        description="Extract ten-crop ResNet-152 image features into the "
                    "'#dim=2048' TSV format.")
    parser.add_argument("--images", type=Path, required=True,
                        help="directory of input images")
    parser.add_argument("--out", type=Path, required=True,
                        help="output feature file")
    parser.add_argument("--weights", choices=["imagenet", "none"],
                        default="imagenet")
    parser.add_argument("--crop-size", type=int, default=224)
    parser.add_argument("--resize-short", type=int, default=256)
    parser.add_argument("--batch-size", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed when --weights none")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    job = FeatureJob(image_dir=args.images, output_path=args.out,
                     crop_size=args.crop_size, resize_short=args.resize_short,
                     weights=args.weights, batch_size=args.batch_size,
                     seed=args.seed)
    try:
        extract_features(job)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
