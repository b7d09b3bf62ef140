"""On-disk cache of visual frame embeddings and per-(template, class) text
embeddings, plus a seeded synthetic generator for desk-scale experiments.

A store on disk is two files in one directory:

* ``manifest.json`` — UTF-8 JSON (sorted keys, 2-space indent, trailing
  newline) with an explicit ``format_version`` field.
* ``embeddings.bin`` — binary payload, all integers little-endian:
  magic ``MPES``, u32 version=1, visual section header (u32 n_videos,
  u32 L, u32 d) followed by n_videos float32 blocks of L*d entries in
  ascending video_id order, text section header (u32 n_temp,
  u32 n_classes, u32 d) followed by float32 blocks in (template, class)
  order, and finally a u32 CRC32 over every preceding byte.

Stores are read-only after load and safe to share across threads;
writing a directory is exclusive.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    PartitionError,
    StoreChecksumError,
    StoreFormatError,
    StoreTruncationError,
    StoreValidationError,
)

MAGIC = b"MPES"
PAYLOAD_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "embeddings.bin"
SPLIT_NAMES = ("base", "val", "novel")


@dataclass
class StoreManifest:
    """Index of everything in a store except the floats themselves."""

    dataset_name: str
    classes: list[str]                    # ordered; positions are class indices
    videos: list[tuple[str, int]]         # (video_id, class_index)
    frames_per_video: int                 # L
    dim: int                              # d
    n_templates: int
    split: dict[str, str] = field(default_factory=dict)  # video_id -> split name

    def to_json_dict(self) -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "dataset_name": self.dataset_name,
            "classes": list(self.classes),
            "videos": [[vid, ci] for vid, ci in self.videos],
            "frames_per_video": self.frames_per_video,
            "dim": self.dim,
            "n_templates": self.n_templates,
            "split": dict(self.split),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "StoreManifest":
        try:
            version = obj["format_version"]
            if version != MANIFEST_VERSION:
                raise StoreFormatError(
                    f"unsupported manifest format_version {version!r}")
            return cls(
                dataset_name=str(obj["dataset_name"]),
                classes=[str(c) for c in obj["classes"]],
                videos=[(str(v), int(c)) for v, c in obj["videos"]],
                frames_per_video=int(obj["frames_per_video"]),
                dim=int(obj["dim"]),
                n_templates=int(obj["n_templates"]),
                split={str(k): str(v) for k, v in obj["split"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreFormatError(f"malformed manifest: {exc}") from exc


def canonical_manifest_bytes(manifest: StoreManifest) -> bytes:
    """The one true byte serialization of a manifest (stable across runs)."""
    return (json.dumps(manifest.to_json_dict(), sort_keys=True, indent=2)
            + "\n").encode("utf-8")


@dataclass
class EmbeddingStore:
    """A manifest plus the embedding arrays it describes.

    visual maps video_id to an (L, d) float32 array; text is an
    (n_templates, n_classes, d) float32 array.
    """

    manifest: StoreManifest
    visual: dict[str, np.ndarray]
    text: np.ndarray

    # -- convenience lookups used by the samplers ---------------------------

    def videos_of_class(self, class_index: int) -> list[str]:
        return [vid for vid, ci in self.manifest.videos if ci == class_index]

    def class_of_video(self, video_id: str) -> int:
        for vid, ci in self.manifest.videos:
            if vid == video_id:
                return ci
        raise KeyError(video_id)

    def split_class_indices(self, split_name: str) -> list[int]:
        """Sorted class indices that have videos assigned to this split."""
        if split_name not in SPLIT_NAMES:
            raise ConfigurationError(
                f"unknown split {split_name!r}; expected one of {SPLIT_NAMES}")
        by_video = dict(self.manifest.videos)
        found = {by_video[vid] for vid, s in self.manifest.split.items()
                 if s == split_name}
        return sorted(found)

    def split_videos_of_class(self, split_name: str, class_index: int) -> list[str]:
        return [vid for vid, ci in self.manifest.videos
                if ci == class_index and self.manifest.split.get(vid) == split_name]


def validate_store(store: EmbeddingStore) -> None:
    """Check every manifest invariant; raise naming the offending field."""
    m = store.manifest
    if m.frames_per_video < 2:
        raise StoreValidationError(
            f"frames_per_video: must be >= 2, got {m.frames_per_video}")
    if m.dim < 4:
        raise StoreValidationError(f"dim: must be >= 4, got {m.dim}")
    if m.n_templates < 1:
        raise StoreValidationError(
            f"n_templates: must be >= 1, got {m.n_templates}")
    if len(set(m.classes)) != len(m.classes):
        raise StoreValidationError("classes: duplicate class names")

    seen_ids = set()
    for vid, ci in m.videos:
        if vid in seen_ids:
            raise StoreValidationError(f"videos: duplicate video_id {vid!r}")
        seen_ids.add(vid)
        if not (0 <= ci < len(m.classes)):
            raise StoreValidationError(
                f"videos: class_index {ci} of {vid!r} out of range "
                f"(store has {len(m.classes)} classes)")

    for vid, split_name in m.split.items():
        if vid not in seen_ids:
            raise StoreValidationError(f"split: unknown video_id {vid!r}")
        if split_name not in SPLIT_NAMES:
            raise StoreValidationError(
                f"split: {vid!r} assigned to unknown split {split_name!r}")
    # label-disjointness across splits
    by_video = dict(m.videos)
    class_splits: dict[int, str] = {}
    for vid, split_name in m.split.items():
        ci = by_video[vid]
        prior = class_splits.get(ci)
        if prior is not None and prior != split_name:
            raise StoreValidationError(
                f"split: class {m.classes[ci]!r} appears in both "
                f"{prior!r} and {split_name!r}")
        class_splits[ci] = split_name

    missing = [vid for vid, _ in m.videos if vid not in store.visual]
    if missing:
        raise StoreValidationError(
            f"visual: missing embeddings for video_ids {missing}")
    extra = sorted(set(store.visual) - seen_ids)
    if extra:
        raise StoreValidationError(
            f"visual: embeddings for unknown video_ids {extra}")
    for vid, arr in store.visual.items():
        if arr.shape != (m.frames_per_video, m.dim):
            raise StoreValidationError(
                f"visual: {vid!r} has shape {arr.shape}, expected "
                f"({m.frames_per_video}, {m.dim})")
        if arr.dtype != np.float32:
            raise StoreValidationError(
                f"visual: {vid!r} has dtype {arr.dtype}, expected float32")
        if not np.isfinite(arr).all():
            raise StoreValidationError(f"visual: {vid!r} contains non-finite values")

    expected_text = (m.n_templates, len(m.classes), m.dim)
    if store.text.shape != expected_text:
        raise StoreValidationError(
            f"text: shape {store.text.shape}, expected {expected_text}")
    if store.text.dtype != np.float32:
        raise StoreValidationError(
            f"text: dtype {store.text.dtype}, expected float32")
    if not np.isfinite(store.text).all():
        raise StoreValidationError("text: contains non-finite values")


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------

def payload_bytes(store: EmbeddingStore) -> bytes:
    """Serialize the embedding arrays to the binary payload format."""
    m = store.manifest
    parts = [MAGIC, struct.pack("<I", PAYLOAD_VERSION)]
    video_ids = sorted(vid for vid, _ in m.videos)
    parts.append(struct.pack("<III", len(video_ids), m.frames_per_video, m.dim))
    for vid in video_ids:
        parts.append(np.ascontiguousarray(
            store.visual[vid], dtype="<f4").tobytes())
    parts.append(struct.pack("<III", m.n_templates, len(m.classes), m.dim))
    parts.append(np.ascontiguousarray(store.text, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Validate and write a store directory (manifest + payload)."""
    validate_store(store)
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_bytes(canonical_manifest_bytes(store.manifest))
    (directory / PAYLOAD_NAME).write_bytes(payload_bytes(store))


def read_store(path: str | Path) -> EmbeddingStore:
    """Read and fully validate a store directory.

    Distinct failure kinds: missing files / bad magic / bad version give
    StoreFormatError, short payload gives StoreTruncationError, CRC
    mismatch gives StoreChecksumError, and manifest/payload disagreement
    gives StoreValidationError naming the field.
    """
    directory = Path(path)
    manifest_path = directory / MANIFEST_NAME
    payload_path = directory / PAYLOAD_NAME
    if not manifest_path.is_file():
        raise StoreFormatError(f"missing manifest file {manifest_path}")
    if not payload_path.is_file():
        raise StoreFormatError(f"missing payload file {payload_path}")
    try:
        manifest_obj = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreFormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest_obj, dict):
        raise StoreFormatError("manifest root must be a JSON object")
    manifest = StoreManifest.from_json_dict(manifest_obj)

    raw = payload_path.read_bytes()
    if len(raw) < 8:
        raise StoreTruncationError(
            f"payload is {len(raw)} bytes; header alone needs 8")
    if raw[:4] != MAGIC:
        raise StoreFormatError(f"bad magic bytes {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != PAYLOAD_VERSION:
        raise StoreFormatError(
            f"unsupported payload version {version}, expected {PAYLOAD_VERSION}")

    offset = 8
    if len(raw) < offset + 12:
        raise StoreTruncationError("payload truncated inside the visual header")
    n_videos, frames, dim = struct.unpack_from("<III", raw, offset)
    offset += 12
    visual_bytes = n_videos * frames * dim * 4
    if len(raw) < offset + visual_bytes + 12:
        raise StoreTruncationError(
            f"payload truncated: visual section promises {visual_bytes} bytes "
            f"plus a text header, file has {len(raw) - offset}")
    visual_flat = np.frombuffer(raw, dtype="<f4", count=n_videos * frames * dim,
                                offset=offset)
    offset += visual_bytes
    n_temp, n_classes, text_dim = struct.unpack_from("<III", raw, offset)
    offset += 12
    text_bytes = n_temp * n_classes * text_dim * 4
    if len(raw) < offset + text_bytes + 4:
        raise StoreTruncationError(
            f"payload truncated: text section promises {text_bytes} bytes "
            f"plus a checksum, file has {len(raw) - offset}")
    if len(raw) != offset + text_bytes + 4:
        raise StoreFormatError(
            f"payload has {len(raw) - offset - text_bytes - 4} trailing bytes")
    text_flat = np.frombuffer(raw, dtype="<f4", count=n_temp * n_classes * text_dim,
                              offset=offset)
    offset += text_bytes
    (stored_crc,) = struct.unpack_from("<I", raw, offset)
    actual_crc = zlib.crc32(raw[:offset]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise StoreChecksumError(
            f"payload checksum mismatch: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}")

    # cross-check payload headers against the manifest
    if n_videos != len(manifest.videos):
        raise StoreValidationError(
            f"videos: manifest lists {len(manifest.videos)}, payload has {n_videos}")
    if frames != manifest.frames_per_video:
        raise StoreValidationError(
            f"frames_per_video: manifest says {manifest.frames_per_video}, "
            f"payload says {frames}")
    if dim != manifest.dim or text_dim != manifest.dim:
        raise StoreValidationError(
            f"dim: manifest says {manifest.dim}, payload says "
            f"visual={dim} text={text_dim}")
    if n_temp != manifest.n_templates:
        raise StoreValidationError(
            f"n_templates: manifest says {manifest.n_templates}, "
            f"payload says {n_temp}")
    if n_classes != len(manifest.classes):
        raise StoreValidationError(
            f"classes: manifest lists {len(manifest.classes)}, "
            f"payload says {n_classes}")

    video_ids = sorted(vid for vid, _ in manifest.videos)
    visual = {}
    block = frames * dim
    for i, vid in enumerate(video_ids):
        visual[vid] = visual_flat[i * block:(i + 1) * block].reshape(frames, dim).copy()
    text = text_flat.reshape(n_temp, n_classes, text_dim).copy()

    store = EmbeddingStore(manifest=manifest, visual=visual, text=text)
    validate_store(store)
    return store


# ---------------------------------------------------------------------------
# synthetic generation and splitting
# ---------------------------------------------------------------------------

def gen_synthetic(seed: int, n_classes: int, videos_per_class: int, frames: int,
                  dim: int, class_sep: float, text_corr: float,
                  n_templates: int = 4,
                  dataset_name: str = "synthetic") -> EmbeddingStore:
    """Deterministic stand-in for real encoder output.

    Each class gets a unit-norm direction mu_c. Frame embeddings are
    normalize(class_sep * mu_c + gaussian noise); text embeddings are
    normalize(text_corr * mu_c + (1 - text_corr) * gaussian). class_sep
    controls visual separability, text_corr controls how informative the
    text channel is about the class.
    """
    if class_sep < 0:
        raise ConfigurationError(f"class_sep must be >= 0, got {class_sep}")
    if not (0.0 <= text_corr <= 1.0):
        raise ConfigurationError(f"text_corr must be in [0, 1], got {text_corr}")
    if n_classes < 1 or videos_per_class < 1:
        raise ConfigurationError(
            f"need at least one class and one video per class, got "
            f"{n_classes} x {videos_per_class}")
    if frames < 2:
        raise ConfigurationError(f"frames must be >= 2, got {frames}")
    if dim < 4:
        raise ConfigurationError(f"dim must be >= 4, got {dim}")
    if n_templates < 1:
        raise ConfigurationError(f"n_templates must be >= 1, got {n_templates}")

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    classes = [f"class{ci:02d}" for ci in range(n_classes)]
    videos: list[tuple[str, int]] = []
    visual: dict[str, np.ndarray] = {}
    for ci in range(n_classes):
        for vi in range(videos_per_class):
            vid = f"class{ci:02d}_vid{vi:03d}"
            raw = class_sep * directions[ci] + rng.standard_normal((frames, dim))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            videos.append((vid, ci))
            visual[vid] = raw.astype(np.float32)

    text = np.empty((n_templates, n_classes, dim), dtype=np.float32)
    for ti in range(n_templates):
        for ci in range(n_classes):
            raw = text_corr * directions[ci] + (1.0 - text_corr) * rng.standard_normal(dim)
            text[ti, ci] = (raw / np.linalg.norm(raw)).astype(np.float32)

    manifest = StoreManifest(
        dataset_name=dataset_name,
        classes=classes,
        videos=videos,
        frames_per_video=frames,
        dim=dim,
        n_templates=n_templates,
    )
    return EmbeddingStore(manifest=manifest, visual=visual, text=text)


def split_store(store: EmbeddingStore, base_classes: list[str],
                val_classes: list[str], novel_classes: list[str]) -> EmbeddingStore:
    """Assign every video to base/val/novel by its class; mutates the manifest.

    The three class lists must partition the store's classes exactly
    (empty lists are allowed); any overlap, repeat, unknown name, or
    uncovered class raises PartitionError.
    """
    m = store.manifest
    lists = {"base": base_classes, "val": val_classes, "novel": novel_classes}
    known = set(m.classes)
    assigned: dict[str, str] = {}
    for split_name, names in lists.items():
        for name in names:
            if name not in known:
                raise PartitionError(
                    f"unknown class {name!r} in {split_name} list")
            if name in assigned:
                raise PartitionError(
                    f"class {name!r} appears in both {assigned[name]!r} "
                    f"and {split_name!r}")
            assigned[name] = split_name
    uncovered = [c for c in m.classes if c not in assigned]
    if uncovered:
        raise PartitionError(f"classes not assigned to any split: {uncovered}")

    m.split = {vid: assigned[m.classes[ci]] for vid, ci in m.videos}
    return store
