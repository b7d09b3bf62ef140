"""Command-line front end.

    embextract --manifest videos.csv --out store_dir [--frames 8]
               [--templates file] [--encoder hashed-projection]
               [--dim 64] [--seed 0] [--dataset-name name]
               [--skip-undecodable]

Exit codes: 0 success, 2 bad job description (CSV, templates, flags),
3 extraction failure (undecodable video without --skip-undecodable,
encoder failure, unwritable output).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .encoders import get_encoder
from .errors import EncoderError, JobError, VideoDecodeError
from .job import (
    DEFAULT_TEMPLATES,
    ExtractionJob,
    read_templates,
    read_video_csv,
    run_job,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embextract",
        description=("Encode videos and label texts into an embedding-store "
                     "directory."))
    parser.add_argument("--manifest", required=True,
                        help="CSV of path,label[,split] rows")
    parser.add_argument("--out", required=True, help="output store directory")
    parser.add_argument("--frames", type=int, default=8,
                        help="frames to sample per video (L, >= 2)")
    parser.add_argument("--templates",
                        help="file of prompt templates, one per line "
                             "(default: 4 built-in templates)")
    parser.add_argument("--encoder", default="hashed-projection",
                        help="registered encoder identifier")
    parser.add_argument("--dim", type=int, default=64,
                        help="embedding width d")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for seeded encoders")
    parser.add_argument("--dataset-name", default="extracted")
    parser.add_argument("--skip-undecodable", action="store_true",
                        help="log and skip videos that fail to decode "
                             "instead of aborting")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        templates = (read_templates(args.templates) if args.templates
                     else DEFAULT_TEMPLATES)
        job = ExtractionJob(
            videos=read_video_csv(args.manifest),
            frames=args.frames,
            templates=templates,
            encoder_id=args.encoder,
            dim=args.dim,
            seed=args.seed,
            dataset_name=args.dataset_name,
            skip_undecodable=args.skip_undecodable,
            out_path=args.out,
        )
        # picking a nonexistent encoder is a usage error, not a failure
        encoder = get_encoder(job.encoder_id, job.dim, job.seed)
    except (JobError, EncoderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_job(job, encoder)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (VideoDecodeError, EncoderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    skipped = f", skipped {len(result.skipped)}" if result.skipped else ""
    print(f"wrote store {result.out_path} "
          f"({result.written_videos} videos{skipped})")
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
