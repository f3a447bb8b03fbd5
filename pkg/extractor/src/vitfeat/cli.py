"""Command line for bundle extraction: `vitfeat extract` / `vitfeat selfcheck`."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractorConfig, extract, selfcheck


def _parse_resize(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"{text!r}: expected HxW, e.g. 224x224 or 448x224") from exc


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("image_dir")
    p.add_argument("--weights", default=None,
                   help="checkpoint path (DeiT/self-supervised layout); "
                        "omit for seeded random initialization")
    p.add_argument("--resize", type=_parse_resize, default=(224, 224),
                   metavar="HxW", help="input size, divisible by 16 "
                                       "(default 224x224; 448x224 for tall grids)")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--device", default="cpu")
    p.add_argument("--embed-dim", type=int, default=384)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--num-heads", type=int, default=6)
    p.add_argument("--seed", type=int, default=0,
                   help="init seed for the no-checkpoint fallback")


def _config(args, out_path: str) -> ExtractorConfig:
    return ExtractorConfig(
        image_dir=args.image_dir, out_path=out_path, weights=args.weights,
        resize=args.resize, batch_size=args.batch_size, device=args.device,
        embed_dim=args.embed_dim, depth=args.depth, num_heads=args.num_heads,
        seed=args.seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vitfeat",
        description="Dump per-image transformer features and attention maps "
                    "to a feature bundle.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a bundle from an image directory")
    _add_model_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("selfcheck", help="extract a sample twice and compare bytes")
    _add_model_flags(p)
    p.add_argument("--sample", type=int, default=10)

    args = parser.parse_args(argv)
    try:
        if args.command == "extract":
            report = extract(_config(args, args.out))
            print(f"wrote {report.written} record(s) to {args.out}"
                  + (f", skipped {len(report.skipped)}" if report.skipped else ""),
                  file=sys.stderr)
            return 0
        report = selfcheck(_config(args, ""), sample=args.sample)
        print(json.dumps(report))
        return 0 if report["byte_identical"] else 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
