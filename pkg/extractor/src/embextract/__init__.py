"""Offline extraction tool: encodes videos and label texts with a frozen
encoder and writes the embedding-store interchange format."""

from .encoders import Encoder, HashedProjectionEncoder, get_encoder, register_encoder
from .errors import EncoderError, ExtractError, JobError, VideoDecodeError
from .format import StoreContent, validate_content, write_store_dir
from .job import (
    DEFAULT_TEMPLATES,
    ExtractionJob,
    ExtractionResult,
    VideoEntry,
    decode_video,
    read_templates,
    read_video_csv,
    run_job,
)
from .sampling import frame_indices, sample_frames

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TEMPLATES",
    "Encoder",
    "EncoderError",
    "ExtractError",
    "ExtractionJob",
    "ExtractionResult",
    "HashedProjectionEncoder",
    "JobError",
    "StoreContent",
    "VideoDecodeError",
    "VideoEntry",
    "decode_video",
    "frame_indices",
    "get_encoder",
    "read_templates",
    "read_video_csv",
    "register_encoder",
    "run_job",
    "sample_frames",
    "validate_content",
    "write_store_dir",
    "__version__",
]
