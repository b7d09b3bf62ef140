"""Extraction jobs: decode videos, sample frames, encode, write a store.

Video sources (the ``path`` column of the input CSV) are either a
``.npy`` file holding one (T, ...) frame array or a directory of
per-frame ``.npy`` files taken in sorted name order. Relative paths are
resolved against the CSV's own directory. Text embeddings are built per
(template, class) from the string ``f"{template} {label}"``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import Encoder, get_encoder
from .errors import EncoderError, JobError, VideoDecodeError
from .format import SPLIT_NAMES, StoreContent, write_store_dir
from .sampling import sample_frames

log = logging.getLogger("embextract")

SIDECAR_NAME = "extraction.json"

DEFAULT_TEMPLATES = (
    "a video of a person performing",
    "a short clip of the action",
    "footage showing",
    "an example recording of",
)


@dataclass(frozen=True)
class VideoEntry:
    path: Path
    label: str
    split: str                    # "", "base", "val", or "novel"

    @property
    def video_id(self) -> str:
        return self.path.stem


@dataclass
class ExtractionJob:
    videos: list[VideoEntry]
    frames: int                                  # L
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    encoder_id: str = "hashed-projection"
    dim: int = 64
    seed: int = 0
    dataset_name: str = "extracted"
    skip_undecodable: bool = False
    out_path: Path = field(default_factory=lambda: Path("store"))

    def __post_init__(self):
        if self.frames < 2:
            raise JobError(f"frames to sample must be >= 2, got {self.frames}")
        if not self.videos:
            raise JobError("job lists no videos")
        if not self.templates or any(not t.strip() for t in self.templates):
            raise JobError("template strings must be nonempty")
        self.templates = tuple(self.templates)
        self.out_path = Path(self.out_path)
        seen: dict[str, Path] = {}
        for entry in self.videos:
            if entry.split and entry.split not in SPLIT_NAMES:
                raise JobError(
                    f"{entry.path}: unknown split {entry.split!r}; expected "
                    f"one of {SPLIT_NAMES} or empty")
            if not entry.label:
                raise JobError(f"{entry.path}: empty label")
            prior = seen.get(entry.video_id)
            if prior is not None:
                raise JobError(
                    f"duplicate video_id {entry.video_id!r} from {prior} "
                    f"and {entry.path}; rename one source")
            seen[entry.video_id] = entry.path


def read_video_csv(path: str | Path) -> list[VideoEntry]:
    """Rows of a path,label[,split] CSV; paths resolve against the CSV."""
    import csv

    csv_path = Path(path)
    if not csv_path.is_file():
        raise JobError(f"video manifest {csv_path} does not exist")
    with open(csv_path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        columns = reader.fieldnames or []
        missing = {"path", "label"} - set(columns)
        if missing:
            raise JobError(
                f"video manifest needs columns path,label[,split]; "
                f"missing {sorted(missing)}")
        entries = []
        for row_number, row in enumerate(reader, start=2):
            raw_path = (row.get("path") or "").strip()
            label = (row.get("label") or "").strip()
            split = (row.get("split") or "").strip()
            if not raw_path or not label:
                raise JobError(
                    f"{csv_path}:{row_number}: path and label are required")
            video_path = Path(raw_path)
            if not video_path.is_absolute():
                video_path = csv_path.parent / video_path
            entries.append(VideoEntry(path=video_path, label=label,
                                      split=split))
    if not entries:
        raise JobError(f"video manifest {csv_path} lists no videos")
    return entries


def read_templates(path: str | Path) -> tuple[str, ...]:
    """Non-blank lines of a templates file, in order."""
    template_path = Path(path)
    if not template_path.is_file():
        raise JobError(f"templates file {template_path} does not exist")
    lines = [line.strip()
             for line in template_path.read_text(encoding="utf-8").splitlines()]
    templates = tuple(line for line in lines if line)
    if not templates:
        raise JobError(f"templates file {template_path} has no templates")
    return templates


def decode_video(path: Path) -> np.ndarray:
    """(T, ...) frame array from a .npy file or a directory of frames."""
    if path.is_dir():
        frame_files = sorted(path.glob("*.npy"))
        if not frame_files:
            raise VideoDecodeError(f"{path}: directory holds no .npy frames")
        frames = [_load_array(p) for p in frame_files]
        first = frames[0].shape
        for frame_file, frame in zip(frame_files, frames):
            if frame.shape != first:
                raise VideoDecodeError(
                    f"{frame_file}: frame shape {frame.shape} differs from "
                    f"{first}")
        return np.stack(frames)
    if not path.is_file():
        raise VideoDecodeError(f"{path}: no such file or directory")
    video = _load_array(path)
    if video.ndim < 2:
        raise VideoDecodeError(
            f"{path}: expected a (frames, ...) array, got shape {video.shape}")
    if video.shape[0] < 1:
        raise VideoDecodeError(f"{path}: video has no frames")
    return video


def _load_array(path: Path) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise VideoDecodeError(f"{path}: not a readable array: {exc}") from exc
    if not isinstance(arr, np.ndarray):
        raise VideoDecodeError(f"{path}: not a plain array")
    return arr


@dataclass(frozen=True)
class ExtractionResult:
    out_path: Path
    written_videos: int
    skipped: tuple[str, ...]      # video_ids skipped over decode failures


def run_job(job: ExtractionJob, encoder: Encoder | None = None
            ) -> ExtractionResult:
    """Extract every video and text pair and write the store directory."""
    if encoder is None:
        encoder = get_encoder(job.encoder_id, job.dim, job.seed)
    if encoder.dim != job.dim:
        raise EncoderError(
            f"encoder {encoder.name!r} has dim {encoder.dim}, job needs "
            f"{job.dim}")

    classes = sorted({entry.label for entry in job.videos})
    class_index = {label: i for i, label in enumerate(classes)}

    videos: list[tuple[str, int]] = []
    visual: dict[str, np.ndarray] = {}
    split: dict[str, str] = {}
    skipped: list[str] = []
    for entry in job.videos:
        try:
            raw = decode_video(entry.path)
        except VideoDecodeError as exc:
            if not job.skip_undecodable:
                raise
            log.warning("skipping undecodable video %s: %s",
                        entry.video_id, exc)
            skipped.append(entry.video_id)
            continue
        sampled = sample_frames(raw, job.frames)
        embedded = np.asarray(encoder.encode_frames(sampled))
        if embedded.shape != (job.frames, job.dim):
            raise EncoderError(
                f"encoder {encoder.name!r} returned shape {embedded.shape} "
                f"for {entry.video_id!r}, expected ({job.frames}, {job.dim})")
        if not np.isfinite(embedded).all():
            raise EncoderError(
                f"encoder {encoder.name!r} produced non-finite values for "
                f"{entry.video_id!r}")
        videos.append((entry.video_id, class_index[entry.label]))
        visual[entry.video_id] = embedded.astype(np.float32)
        if entry.split:
            split[entry.video_id] = entry.split

    if not videos:
        raise JobError("every video was skipped; nothing to write")

    text = np.empty((len(job.templates), len(classes), job.dim),
                    dtype=np.float32)
    for ti, template in enumerate(job.templates):
        for ci, label in enumerate(classes):
            vector = np.asarray(encoder.encode_text(f"{template} {label}"))
            if vector.shape != (job.dim,):
                raise EncoderError(
                    f"encoder {encoder.name!r} returned shape {vector.shape} "
                    f"for text, expected ({job.dim},)")
            if not np.isfinite(vector).all():
                raise EncoderError(
                    f"encoder {encoder.name!r} produced non-finite text "
                    f"values for {template!r} / {label!r}")
            text[ti, ci] = vector.astype(np.float32)

    content = StoreContent(
        dataset_name=job.dataset_name,
        classes=classes,
        videos=videos,
        frames_per_video=job.frames,
        dim=job.dim,
        visual=visual,
        text=text,
        split=split,
    )
    write_store_dir(content, job.out_path)
    sidecar = {
        "encoder": encoder.name,
        "dim": job.dim,
        "frames_per_video": job.frames,
        "seed": job.seed,
        "templates": list(job.templates),
        "skipped_videos": skipped,
        "written_videos": len(videos),
    }
    (Path(job.out_path) / SIDECAR_NAME).write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    return ExtractionResult(out_path=Path(job.out_path),
                            written_videos=len(videos),
                            skipped=tuple(skipped))
