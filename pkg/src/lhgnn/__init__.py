"""Audio tagging with local + higher-order graph convolutions.

The network treats a log-mel spectrogram as an image, flattens each
stage's feature map into nodes, and updates every node from two
relation sets: its k nearest neighbors and the fuzzy-cluster centroids
it belongs to most strongly.  This package provides the numeric core
(reverse-mode autodiff over numpy), the frontend, the model, training
and evaluation tooling, plus scikit-learn style wrappers.
"""

from . import tensor
from .audio import AudioClip, LogMelExtractor, load_wav, logmel, mel_filterbank, normalize
from .checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from .clustering import (
    ClusterState,
    FuzzyCMeans,
    HigherOrderSet,
    LloydKMeans,
    fuzzy_cmeans,
    kmeans,
    memberships,
    update_centroids,
)
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    MetricUndefinedError,
    NumericsError,
    ParameterError,
    StateError,
)
from .estimator import LHGNNClassifier
from .gradcheck import gradient_check
from .graph import KernelVariant, LhgConvParams, lhg_conv, max_relative
from .metrics import accuracy, average_precision, mean_average_precision
from .model import ModelConfig, forward, init_params, param_count, stage_geometry, tiny_config
from .neighbors import NeighborSet, knn
from .training import (
    AdamW,
    AugmentConfig,
    OptimConfig,
    TrainConfig,
    evaluate_arrays,
    mixup,
    spec_augment,
    train_arrays,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AudioClip",
    "AugmentConfig",
    "ClusterState",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "FuzzyCMeans",
    "HigherOrderSet",
    "KernelVariant",
    "LHGNNClassifier",
    "LhgConvParams",
    "LloydKMeans",
    "LogMelExtractor",
    "MetricUndefinedError",
    "ModelConfig",
    "NeighborSet",
    "NumericsError",
    "OptimConfig",
    "ParameterError",
    "StateError",
    "TrainConfig",
    "accuracy",
    "average_checkpoints",
    "average_precision",
    "evaluate_arrays",
    "forward",
    "fuzzy_cmeans",
    "gradient_check",
    "init_params",
    "kmeans",
    "knn",
    "lhg_conv",
    "load_checkpoint",
    "load_wav",
    "logmel",
    "max_relative",
    "mean_average_precision",
    "mel_filterbank",
    "memberships",
    "mixup",
    "normalize",
    "param_count",
    "save_checkpoint",
    "spec_augment",
    "stage_geometry",
    "tensor",
    "tiny_config",
    "train_arrays",
    "update_centroids",
]
