import csv
from pathlib import Path

import numpy as np
import pytest


def _write_video(path: Path, frames: int, seed: int,
                 height: int = 6, width: int = 5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    video = rng.integers(0, 256, size=(frames, height, width, 3),
                         dtype=np.uint8)
    np.save(path, video)
    return video


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Five videos, two classes, base/novel splits; one video is stored
    as a directory of per-frame files. Returns (csv_path, videos dict)."""
    root = tmp_path_factory.mktemp("corpus")
    videos = {
        "wave_a": _write_video(root / "wave_a.npy", frames=6, seed=1),
        "wave_b": _write_video(root / "wave_b.npy", frames=4, seed=2),
        "wave_c": _write_video(root / "wave_c.npy", frames=9, seed=3),
        "jump_a": _write_video(root / "jump_a.npy", frames=5, seed=4),
    }
    # one source as a directory of frames, taken in sorted name order
    frame_dir = root / "jump_b"
    frame_dir.mkdir()
    rng = np.random.default_rng(5)
    jump_b = rng.integers(0, 256, size=(7, 6, 5, 3), dtype=np.uint8)
    for i, frame in enumerate(jump_b):
        np.save(frame_dir / f"frame{i:02d}.npy", frame)
    videos["jump_b"] = jump_b

    rows = [
        ("wave_a.npy", "wave", "base"),
        ("wave_b.npy", "wave", "base"),
        ("wave_c.npy", "wave", "base"),
        ("jump_a.npy", "jump", "novel"),
        ("jump_b", "jump", "novel"),
    ]
    csv_path = root / "videos.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label", "split"])
        writer.writerows(rows)
    return csv_path, videos
