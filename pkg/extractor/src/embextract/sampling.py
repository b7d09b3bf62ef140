"""Uniform frame-index sampling.

A video with T frames is reduced to L frames at indices
round(i * (T - 1) / (L - 1)) for i in 0..L-1 (nearest integer, ties to
even). L == T keeps every frame in order; L == 2 keeps exactly the
first and last frame; T < L repeats neighboring indices as the rounding
dictates.
"""

from __future__ import annotations

import numpy as np

from .errors import JobError, VideoDecodeError


def frame_indices(total_frames: int, sample_count: int) -> list[int]:
    """Indices of the sampled frames, ascending, possibly repeating."""
    if sample_count < 2:
        raise JobError(f"frames to sample must be >= 2, got {sample_count}")
    if total_frames < 1:
        raise VideoDecodeError(f"video has {total_frames} frames")
    positions = (np.arange(sample_count, dtype=np.float64)
                 * (total_frames - 1) / (sample_count - 1))
    return [int(i) for i in np.rint(positions).astype(np.int64)]


def sample_frames(video: np.ndarray, sample_count: int) -> np.ndarray:
    """The L sampled frames of a (T, ...) frame array, in order."""
    return video[frame_indices(video.shape[0], sample_count)]
