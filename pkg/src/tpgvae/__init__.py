"""Ternary-prior-guided variational video prediction.

A recurrent VAE over 64x64 gesture clips whose latent combines a learned
content prior, a learned motion prior over frame differences, and a
constant one-hot gesture label. Inference rolls future frames out
deterministically from the prior means.
"""

from .config import ConfigError, ExperimentConfig, load_config
from .data import (
    ClipManifest,
    Gesture,
    ManifestEntry,
    N_GESTURES,
    VideoClip,
    build_synthetic_dataset,
    frame_difference,
    generate_synthetic_clip,
    one_hot_label,
    subsample_every_other,
    to_grayscale,
)
from .metrics import (
    AggregateTable,
    FeatureEmbedder,
    MetricSeries,
    aggregate,
    best_of_k,
    feature_cosine,
    psnr,
    ssim,
)
from .model import (
    CheckpointError,
    EncoderFeatures,
    LatentGaussian,
    ModelConfig,
    RecurrentState,
    TPGModel,
    TernaryLatent,
    VARIANTS,
    VariantSpec,
    load_checkpoint,
    save_checkpoint,
)
from .objective import (
    LossBreakdown,
    TrainingConfig,
    gaussian_noise,
    kl_diag_gaussian,
    reparameterize,
    zero_noise,
)
from .rollout import (
    RolloutResult,
    RolloutState,
    continue_rollout,
    prepare_rollout,
    prior_mean_rollout,
    sampled_rollout,
    teacher_forced_pass,
)
from .training import collate_clips, fit, make_optimizer, sequence_loss, train_step

__version__ = "0.1.0"

__all__ = [
    "AggregateTable",
    "CheckpointError",
    "ClipManifest",
    "ConfigError",
    "EncoderFeatures",
    "ExperimentConfig",
    "FeatureEmbedder",
    "Gesture",
    "LatentGaussian",
    "LossBreakdown",
    "ManifestEntry",
    "MetricSeries",
    "ModelConfig",
    "N_GESTURES",
    "RecurrentState",
    "RolloutResult",
    "RolloutState",
    "TPGModel",
    "TernaryLatent",
    "TrainingConfig",
    "VARIANTS",
    "VariantSpec",
    "VideoClip",
    "aggregate",
    "best_of_k",
    "build_synthetic_dataset",
    "collate_clips",
    "continue_rollout",
    "feature_cosine",
    "fit",
    "frame_difference",
    "gaussian_noise",
    "generate_synthetic_clip",
    "kl_diag_gaussian",
    "load_checkpoint",
    "load_config",
    "make_optimizer",
    "one_hot_label",
    "prepare_rollout",
    "prior_mean_rollout",
    "psnr",
    "reparameterize",
    "sampled_rollout",
    "save_checkpoint",
    "sequence_loss",
    "ssim",
    "subsample_every_other",
    "teacher_forced_pass",
    "to_grayscale",
    "train_step",
    "zero_noise",
]
