"""Frame preprocessing: grayscale, frame differences, subsampling, labels."""

from __future__ import annotations

import torch

from .types import Gesture, VideoClip

# Conventional luminance weights for RGB -> gray.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def to_grayscale(frame: torch.Tensor) -> torch.Tensor:
    """Convert a channel-last frame [..., h, w, c] to [..., h, w, 1].

    c = 1 is returned unchanged; c = 3 uses the luminance weights. Leading
    batch/time dimensions pass through untouched.
    """
    if frame.ndim < 3:
        raise ValueError(f"expected [..., h, w, c] frame, got shape {tuple(frame.shape)}")
    c = frame.shape[-1]
    if c == 1:
        return frame
    if c == 3:
        w = torch.tensor(GRAY_WEIGHTS, dtype=frame.dtype, device=frame.device)
        return (frame * w).sum(dim=-1, keepdim=True)
    raise ValueError(f"unsupported channel count {c}; expected 1 or 3")


def frame_difference(prev: torch.Tensor, curr: torch.Tensor) -> torch.Tensor:
    """Element-wise grayscale difference curr - prev, shape [..., h, w, 1] in [-1, 1]."""
    if prev.shape != curr.shape:
        raise ValueError(
            f"frame shapes differ: {tuple(prev.shape)} vs {tuple(curr.shape)}"
        )
    return to_grayscale(curr) - to_grayscale(prev)


def subsample_every_other(clip: VideoClip) -> VideoClip:
    """Keep frames at indices 0, 2, 4, ...; gesture and id preserved."""
    if clip.length < 3:
        raise ValueError(f"clip {clip.clip_id!r} too short to subsample: {clip.length} frames")
    return VideoClip(
        frames=clip.frames[::2],
        gesture=clip.gesture,
        clip_id=clip.clip_id,
        source=clip.source,
    )


def one_hot_label(gesture: Gesture | int, n_l: int) -> torch.Tensor:
    """One-hot encode a gesture at its canonical index, shape [n_l]."""
    idx = gesture.index if isinstance(gesture, Gesture) else int(gesture)
    if not 0 <= idx < n_l:
        raise ValueError(f"gesture index {idx} out of range for {n_l} classes")
    vec = torch.zeros(n_l, dtype=torch.float32)
    vec[idx] = 1.0
    return vec
