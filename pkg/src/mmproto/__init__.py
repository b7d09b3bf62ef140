"""Episodic few-shot metric learning over cached visual and text
embeddings, with multimodal prototype fusion, a prototype-quality
metric, and a built-in reverse-mode autodiff core."""

from .errors import (
    CapacityError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    MmprotoError,
    NumericError,
    PartitionError,
    StoreChecksumError,
    StoreError,
    StoreFormatError,
    StoreTruncationError,
    StoreValidationError,
    UndefinedSimilarityError,
    UsageError,
)
from .episodes import Episode, sample_episode
from .harness import EvalReport, TrainConfig, evaluate, pride_report, sweep, train
from .pipeline import Model, ModelConfig, ModelParams, init_model
from .store import (
    EmbeddingStore,
    StoreManifest,
    gen_synthetic,
    read_store,
    split_store,
    validate_store,
    write_store,
)
from .tensor import Tensor, backward, finite_diff_check

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigurationError",
    "DimensionError",
    "DivergenceError",
    "EmbeddingStore",
    "Episode",
    "EvalReport",
    "MmprotoError",
    "Model",
    "ModelConfig",
    "ModelParams",
    "NumericError",
    "PartitionError",
    "StoreChecksumError",
    "StoreError",
    "StoreFormatError",
    "StoreManifest",
    "StoreTruncationError",
    "StoreValidationError",
    "Tensor",
    "TrainConfig",
    "UndefinedSimilarityError",
    "UsageError",
    "backward",
    "evaluate",
    "finite_diff_check",
    "gen_synthetic",
    "init_model",
    "pride_report",
    "read_store",
    "sample_episode",
    "split_store",
    "sweep",
    "train",
    "validate_store",
    "write_store",
    "__version__",
]
