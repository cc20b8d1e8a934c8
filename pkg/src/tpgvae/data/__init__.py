"""Clip types, preprocessing ops, synthetic generation, and dataset IO."""

from .ops import (
    GRAY_WEIGHTS,
    frame_difference,
    one_hot_label,
    subsample_every_other,
    to_grayscale,
)
from .store import (
    ClipStoreError,
    load_clip,
    load_dataset,
    read_clip,
    write_clip,
    write_dataset,
)
from .synthetic import (
    DEFAULT_FRAME_SIZE,
    SCRIPTS,
    ArmPath,
    SynthGestureScript,
    build_synthetic_dataset,
    generate_synthetic_clip,
    render_frame,
)
from .types import ClipManifest, Gesture, ManifestEntry, N_GESTURES, VideoClip

__all__ = [
    "ArmPath",
    "ClipManifest",
    "ClipStoreError",
    "DEFAULT_FRAME_SIZE",
    "GRAY_WEIGHTS",
    "Gesture",
    "ManifestEntry",
    "N_GESTURES",
    "SCRIPTS",
    "SynthGestureScript",
    "VideoClip",
    "build_synthetic_dataset",
    "frame_difference",
    "generate_synthetic_clip",
    "load_clip",
    "load_dataset",
    "one_hot_label",
    "read_clip",
    "render_frame",
    "subsample_every_other",
    "to_grayscale",
    "write_clip",
    "write_dataset",
]
