"""Encoders that turn raw frames and strings into embedding vectors.

The tool is encoder-agnostic: anything satisfying the Encoder protocol
can be registered under an identifier and selected per job. A real
pretrained vision-language model plugs in by implementing the two
encode methods (its weights stay frozen — this tool never trains).

The built-in ``hashed-projection`` encoder is a deterministic
stand-in for environments without pretrained weights: frames are
reduced to a fixed-length signature and passed through a seeded
Gaussian projection; text is embedded by seeding a Gaussian draw from
the string's SHA-256 digest, so equal strings always embed identically.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Protocol

import numpy as np

from .errors import EncoderError

SIGNATURE_GRID = 8  # per-channel downsample resolution of the frame signature


class Encoder(Protocol):
    """One frozen encoder pair (visual + text) with a fixed output width."""

    name: str
    dim: int

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        """(L, ...) frame array -> (L, dim) float32."""
        ...

    def encode_text(self, text: str) -> np.ndarray:
        """string -> (dim,) float32."""
        ...


class HashedProjectionEncoder:
    """Deterministic content-keyed encoder (no pretrained weights).

    Visual: each frame is summarized by a signature — overall
    mean/std/min/max plus an 8x8 per-channel grid resample — which is
    standardized and projected by a Gaussian matrix derived from
    (seed, signature length, dim). Text: the UTF-8 string's SHA-256
    digest seeds a unit-norm Gaussian vector.
    """

    name = "hashed-projection"

    def __init__(self, dim: int, seed: int = 0):
        if dim < 4:
            raise EncoderError(f"dim must be >= 4, got {dim}")
        self.dim = dim
        self.seed = seed
        self._projections: dict[int, np.ndarray] = {}

    def _projection(self, signature_len: int) -> np.ndarray:
        matrix = self._projections.get(signature_len)
        if matrix is None:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, signature_len, self.dim]))
            matrix = rng.standard_normal(
                (signature_len, self.dim)) / np.sqrt(signature_len)
            self._projections[signature_len] = matrix
        return matrix

    def _frame_signature(self, frame: np.ndarray) -> np.ndarray:
        pixels = np.asarray(frame, dtype=np.float64)
        if pixels.ndim == 1:
            pixels = pixels[:, None, None]
        elif pixels.ndim == 2:
            pixels = pixels[:, :, None]
        elif pixels.ndim != 3:
            raise EncoderError(
                f"frame must have 1-3 axes, got shape {frame.shape}")
        height, width, channels = pixels.shape
        rows = np.rint(np.linspace(0, height - 1, SIGNATURE_GRID)).astype(int)
        cols = np.rint(np.linspace(0, width - 1, SIGNATURE_GRID)).astype(int)
        grid = pixels[np.ix_(rows, cols)]                 # (8, 8, channels)
        stats = np.array([pixels.mean(), pixels.std(),
                          pixels.min(), pixels.max()])
        signature = np.concatenate([stats, grid.ravel()])
        spread = signature.std()
        return (signature - signature.mean()) / (spread if spread > 0 else 1.0)

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        signatures = np.stack([self._frame_signature(f) for f in frames])
        out = signatures @ self._projection(signatures.shape[1])
        return out.astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        words = np.frombuffer(digest, dtype="<u4")
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, self.dim, *map(int, words)]))
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


_REGISTRY: dict[str, Callable[[int, int], Encoder]] = {
    HashedProjectionEncoder.name:
        lambda dim, seed: HashedProjectionEncoder(dim, seed),
}


def register_encoder(name: str,
                     factory: Callable[[int, int], Encoder]) -> None:
    """Register a factory (dim, seed) -> Encoder under an identifier."""
    _REGISTRY[name] = factory


def get_encoder(identifier: str, dim: int, seed: int = 0) -> Encoder:
    factory = _REGISTRY.get(identifier)
    if factory is None:
        known = ", ".join(sorted(_REGISTRY))
        raise EncoderError(
            f"unknown encoder {identifier!r}; registered encoders: {known}")
    return factory(dim, seed)
