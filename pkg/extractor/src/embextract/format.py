"""Writer for the embedding-store interchange format.

A store directory holds two files:

* ``manifest.json`` — UTF-8 JSON, sorted keys, 2-space indent, trailing
  newline, with an explicit ``format_version`` field.
* ``embeddings.bin`` — all integers little-endian: magic ``MPES``,
  u32 version=1, visual header (u32 n_videos, u32 L, u32 d) followed by
  one float32 L*d block per video in ascending video_id order, text
  header (u32 n_templates, u32 n_classes, u32 d) followed by the float32
  text block in (template, class) order, then a u32 CRC32 over every
  preceding byte.

This is an independent implementation of the format so the tool stands
alone; consumers re-validate on read.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import JobError

MAGIC = b"MPES"
PAYLOAD_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "embeddings.bin"
SPLIT_NAMES = ("base", "val", "novel")


@dataclass
class StoreContent:
    """Everything that goes into one store directory."""

    dataset_name: str
    classes: list[str]                    # ordered; positions are class indices
    videos: list[tuple[str, int]]         # (video_id, class_index)
    frames_per_video: int
    dim: int
    visual: dict[str, np.ndarray]         # video_id -> (L, d) float32
    text: np.ndarray                      # (n_templates, n_classes, d) float32
    split: dict[str, str] = field(default_factory=dict)

    @property
    def n_templates(self) -> int:
        return int(self.text.shape[0])


def validate_content(content: StoreContent) -> None:
    """Mirror the consumer's invariants; raise naming the offending field."""
    if content.frames_per_video < 2:
        raise JobError(
            f"frames_per_video: must be >= 2, got {content.frames_per_video}")
    if content.dim < 4:
        raise JobError(f"dim: must be >= 4, got {content.dim}")
    if len(set(content.classes)) != len(content.classes):
        raise JobError("classes: duplicate class names")
    if content.text.ndim != 3:
        raise JobError(f"text: expected 3 axes, got shape {content.text.shape}")
    expected_text = (content.n_templates, len(content.classes), content.dim)
    if content.text.shape != expected_text or content.n_templates < 1:
        raise JobError(
            f"text: shape {content.text.shape}, expected {expected_text}")
    if content.text.dtype != np.float32:
        raise JobError(f"text: dtype {content.text.dtype}, expected float32")
    if not np.isfinite(content.text).all():
        raise JobError("text: contains non-finite values")

    seen = set()
    for vid, ci in content.videos:
        if vid in seen:
            raise JobError(f"videos: duplicate video_id {vid!r}")
        seen.add(vid)
        if not (0 <= ci < len(content.classes)):
            raise JobError(
                f"videos: class_index {ci} of {vid!r} out of range "
                f"(store has {len(content.classes)} classes)")
        arr = content.visual.get(vid)
        if arr is None:
            raise JobError(f"visual: missing embeddings for video_id {vid!r}")
        if arr.shape != (content.frames_per_video, content.dim):
            raise JobError(
                f"visual: {vid!r} has shape {arr.shape}, expected "
                f"({content.frames_per_video}, {content.dim})")
        if arr.dtype != np.float32:
            raise JobError(
                f"visual: {vid!r} has dtype {arr.dtype}, expected float32")
        if not np.isfinite(arr).all():
            raise JobError(f"visual: {vid!r} contains non-finite values")
    extra = sorted(set(content.visual) - seen)
    if extra:
        raise JobError(f"visual: embeddings for unknown video_ids {extra}")

    class_split: dict[int, str] = {}
    by_video = dict(content.videos)
    for vid, split_name in content.split.items():
        if vid not in seen:
            raise JobError(f"split: unknown video_id {vid!r}")
        if split_name not in SPLIT_NAMES:
            raise JobError(
                f"split: {vid!r} assigned to unknown split {split_name!r}")
        ci = by_video[vid]
        prior = class_split.get(ci)
        if prior is not None and prior != split_name:
            raise JobError(
                f"split: class {content.classes[ci]!r} appears in both "
                f"{prior!r} and {split_name!r}")
        class_split[ci] = split_name


def manifest_bytes(content: StoreContent) -> bytes:
    obj = {
        "format_version": MANIFEST_VERSION,
        "dataset_name": content.dataset_name,
        "classes": list(content.classes),
        "videos": [[vid, ci] for vid, ci in content.videos],
        "frames_per_video": content.frames_per_video,
        "dim": content.dim,
        "n_templates": content.n_templates,
        "split": dict(content.split),
    }
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def payload_bytes(content: StoreContent) -> bytes:
    parts = [MAGIC, struct.pack("<I", PAYLOAD_VERSION)]
    video_ids = sorted(vid for vid, _ in content.videos)
    parts.append(struct.pack("<III", len(video_ids),
                             content.frames_per_video, content.dim))
    for vid in video_ids:
        parts.append(np.ascontiguousarray(
            content.visual[vid], dtype="<f4").tobytes())
    parts.append(struct.pack("<III", content.n_templates,
                             len(content.classes), content.dim))
    parts.append(np.ascontiguousarray(content.text, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_store_dir(content: StoreContent, path: str | Path) -> None:
    """Validate and write one store directory (manifest + payload)."""
    validate_content(content)
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_bytes(manifest_bytes(content))
    (directory / PAYLOAD_NAME).write_bytes(payload_bytes(content))
