"""Spoofed-speech detection over chunked non-semantic audio embeddings.

The quickest route in is the scikit-learn style estimator:

    from nonsemdetect import SpoofDetector
    detector = SpoofDetector().fit(X, y)   # X: (n, d, t) embedding stacks
    scores = detector.decision_function(X_eval)

The underlying pipeline (embedding files, dataset manifests, the training
recipe, EER reporting, and the CLI) is exposed by the submodules.
"""

from .datasets import (
    DatasetSplit,
    TrialRecord,
    batch_iterator,
    generate_synthetic_dataset,
    parse_asvspoof_protocol,
    parse_manifest,
    read_manifest,
    write_manifest,
)
from .detector import (
    DetectorConfig,
    DetectorModel,
    load_checkpoint,
    save_checkpoint,
    score,
)
from .errors import (
    ConfigurationError,
    DataError,
    FormatError,
    InvalidAudioError,
    NonsemError,
    NumericError,
    ParseError,
    ValidationError,
)
from .estimator import SpoofDetector
from .features import (
    EmbeddingMatrix,
    FrontendSpec,
    chunk_waveform,
    extract_matrix,
    normalize_length,
    read_embedding_file,
    read_wav,
    synthetic_frontend,
    write_embedding_file,
    write_wav,
)
from .metrics import (
    EerResult,
    ScoreEntry,
    compute_eer,
    per_attack_eer,
    pooled_eer,
    read_scores,
    write_scores,
)
from .training import TrainConfig, TrainLog, evaluate_checkpoint, lr_at_epoch, train
from .validation import check_binary_labels, check_embedding_stack

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DataError",
    "DatasetSplit",
    "DetectorConfig",
    "DetectorModel",
    "EerResult",
    "EmbeddingMatrix",
    "FormatError",
    "FrontendSpec",
    "InvalidAudioError",
    "NonsemError",
    "NumericError",
    "ParseError",
    "ScoreEntry",
    "SpoofDetector",
    "TrainConfig",
    "TrainLog",
    "TrialRecord",
    "ValidationError",
    "batch_iterator",
    "check_binary_labels",
    "check_embedding_stack",
    "chunk_waveform",
    "compute_eer",
    "evaluate_checkpoint",
    "extract_matrix",
    "generate_synthetic_dataset",
    "load_checkpoint",
    "lr_at_epoch",
    "normalize_length",
    "parse_asvspoof_protocol",
    "parse_manifest",
    "per_attack_eer",
    "pooled_eer",
    "read_embedding_file",
    "read_manifest",
    "read_scores",
    "read_wav",
    "save_checkpoint",
    "score",
    "synthetic_frontend",
    "train",
    "write_embedding_file",
    "write_manifest",
    "write_scores",
    "write_wav",
]
