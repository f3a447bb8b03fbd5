"""Command-line front end: validate / synth / patterns / select / stats.

Exit codes are a stable contract: 0 success, 1 data violation, 2 usage or
I/O error (argparse usage failures already exit 2). All subcommands are
deterministic for fixed inputs, flags and seed; wall-clock timing is
reported on stdout, never written into output files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import bundle_io, pattern_extraction, selection

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2


class _CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _sniff_kind(path: str) -> str:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == bundle_io.MAGIC:
        return "bundle"
    if magic == pattern_extraction.PATTERNS_MAGIC:
        return "patterns"
    raise _CliError(f"{path}: unrecognized magic {magic!r}")


def cmd_validate(args) -> int:
    bad_records = 0
    total = 0
    for record in bundle_io.read_bundle_stream(args.bundle):
        total += 1
        report = bundle_io.validate_record(record, tolerance=args.tolerance)
        if report.ok:
            continue
        bad_records += 1
        for v in report.violations:
            idx = "" if v.index is None else f"[{v.index}]"
            print(f"{record.image_id}: {v.field}{idx} {v.message} "
                  f"(observed {v.observed!r})", file=sys.stderr)
    print(f"validated {total} record(s), {bad_records} invalid", file=sys.stderr)
    return EXIT_OK if bad_records == 0 else EXIT_DATA


def cmd_synth(args) -> int:
    spec = bundle_io.SynthSpec(
        num_images=args.n, grid_h=args.grid_h, grid_w=args.grid_w,
        feat_dim=args.feat_dim, num_latent_categories=args.categories,
        noise_scale=args.noise, seed=args.seed)
    count = bundle_io.write_bundle(bundle_io.generate_synthetic_bundle(spec), args.out)
    print(f"wrote {count} record(s) to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_patterns(args) -> int:
    cfg = pattern_extraction.ExtractionConfig(
        tau=args.tau, k_patterns=args.k, d0=args.d0, seed=args.seed)
    _, total = bundle_io.read_bundle_header(args.bundle)

    def progress(done: int, image_id: str) -> None:
        if done % 100 == 0 or done == total:
            print(f"extracted {done}/{total}", file=sys.stderr)

    records = bundle_io.read_bundle_stream(args.bundle)
    sets = pattern_extraction.extract_bundle_patterns(
        records, cfg, threads=args.threads, progress=progress)
    count = pattern_extraction.write_patterns(sets, args.out)
    print(f"wrote patterns for {count} record(s) to {args.out}", file=sys.stderr)
    return EXIT_OK


def _load_selection_input(args) -> tuple[str, object]:
    kind = args.input_kind
    if kind == "auto":
        kind = _sniff_kind(args.input)
    if args.strategy in ("prob", "fds"):
        if kind != "patterns":
            raise _CliError(f"strategy {args.strategy} needs a patterns file, "
                            f"got a {kind}")
        pool = selection.CandidatePool.from_pattern_sets(
            pattern_extraction.read_patterns(args.input))
        return kind, pool
    if args.strategy in ("global-fds", "kmeans"):
        if kind != "bundle":
            raise _CliError(f"strategy {args.strategy} needs a bundle, got a {kind}")
        return kind, bundle_io.read_bundle_stream(args.input)
    # random: only needs ids, either input works
    if kind == "patterns":
        ids = [ps.image_id for ps in pattern_extraction.read_patterns(args.input)]
    else:
        ids = [r.image_id for r in bundle_io.read_bundle_stream(args.input)]
    return kind, ids


def cmd_select(args) -> int:
    start = time.perf_counter()
    _, data = _load_selection_input(args)
    if args.strategy == "prob":
        result = selection.select_prob(data, args.budget, args.seed, args.distance)
    elif args.strategy == "fds":
        result = selection.select_fds(data, args.budget, args.seed, args.distance)
    elif args.strategy == "global-fds":
        result = selection.select_global_fds(data, args.budget, args.seed,
                                             args.distance)
    elif args.strategy == "kmeans":
        result = selection.select_kmeans_global(data, args.budget, args.seed)
    else:
        result = selection.select_random(data, args.budget, args.seed)
    wall = time.perf_counter() - start

    if args.ids_only:
        selection.write_selection_ids(result, args.out)
    else:
        selection.write_selection_jsonl(result, args.out)
    print(json.dumps(selection.selection_summary(result, wall_time_s=wall)))
    return EXIT_OK


def _read_selection_trail(path: str) -> tuple[list[dict], dict]:
    steps: list[dict] = []
    summary: dict | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _CliError(f"{path}: not a selection JSON-lines file "
                                f"({exc})") from exc
            if "summary" in obj:
                summary = obj["summary"]
            else:
                steps.append(obj)
    if summary is None or not steps:
        raise _CliError(f"{path}: selection trail is missing steps or summary")
    return steps, summary


def cmd_stats(args) -> int:
    steps, summary = _read_selection_trail(args.selection)
    distance = summary.get("config", {}).get("distance") or "cosine"

    pool = selection.CandidatePool.from_pattern_sets(
        pattern_extraction.read_patterns(args.patterns))
    index_of = {image_id: i for i, image_id in enumerate(pool.image_ids)}
    state = selection.new_selection_state(pool)

    rows = []
    for step in steps:
        image_id = step["image_id"]
        if image_id not in index_of:
            raise _CliError(f"selected image {image_id!r} not in patterns file")
        selection.update_min_dist(state, pool.patterns_of(index_of[image_id]),
                                  pool, distance)
        radius = float(np.max(state.min_dist))
        rows.append((step["step"], image_id, step.get("min_dist"),
                     step.get("mass"), radius))

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "image_id", "min_dist", "mass", "covering_radius"])
        for step_no, image_id, min_dist, mass, radius in rows:
            writer.writerow([step_no, image_id,
                             "" if min_dist is None else repr(min_dist),
                             "" if mass is None else repr(mass),
                             repr(radius)])
    print(f"wrote {len(rows)} row(s) to {args.out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patsel",
        description="Single-pass diverse image selection over feature bundles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check every record in a bundle")
    p.add_argument("bundle")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a deterministic synthetic bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--grid-h", type=int, default=14)
    p.add_argument("--grid-w", type=int, default=14)
    p.add_argument("--feat-dim", type=int, default=384)
    p.add_argument("--categories", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("patterns", help="extract per-image patterns from a bundle")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--d0", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_patterns)

    p = sub.add_parser("select", help="select a diverse image subset")
    p.add_argument("input", help="patterns file or bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=selection.STRATEGIES, default="prob")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distance", choices=selection.DISTANCES, default="cosine")
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for interface parity; selection is sequential")
    p.add_argument("--ids-only", action="store_true",
                   help="write one image id per line instead of JSON lines")
    p.add_argument("--input-kind", choices=("auto", "bundle", "patterns"),
                   default="auto")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("stats", help="coverage metrics for a selection trail")
    p.add_argument("selection", help="selection JSON-lines file")
    p.add_argument("patterns", help="patterns file for the same pool")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except bundle_io.BundleFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
