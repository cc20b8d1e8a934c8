"""Core data types: labeled video clips, gesture classes, dataset manifests."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import torch


class Gesture(enum.Enum):
    """Canonical gesture classes, totally ordered by index.

    The four classes mirror the motion patterns the synthetic generator
    renders: the left arm approaching the field center, the right arm
    pushing with an oscillation, a hand-off where the left arm extends
    into the field, and the left arm pulling away. Transcription files
    label them with the tokens G2/G3/G4/G6 respectively.
    """

    APPROACH = 0
    PUSH = 1
    HANDOFF = 2
    PULL = 3

    @property
    def index(self) -> int:
        return self.value

    @property
    def token(self) -> str:
        return _GESTURE_TOKENS[self]

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def from_token(cls, token: str) -> "Gesture":
        for g, t in _GESTURE_TOKENS.items():
            if t == token:
                return g
        raise ValueError(f"unknown gesture token {token!r}")

    @classmethod
    def from_index(cls, index: int) -> "Gesture":
        try:
            return cls(index)
        except ValueError:
            raise ValueError(
                f"gesture index {index} out of range [0, {len(cls) - 1}]"
            ) from None


_GESTURE_TOKENS = {
    Gesture.APPROACH: "G2",
    Gesture.PUSH: "G3",
    Gesture.HANDOFF: "G4",
    Gesture.PULL: "G6",
}

_DISPLAY_NAMES = {
    Gesture.APPROACH: "left-arm approach",
    Gesture.PUSH: "right-arm push",
    Gesture.HANDOFF: "hand-off",
    Gesture.PULL: "left-arm pull-away",
}

N_GESTURES = len(Gesture)


@dataclass
class VideoClip:
    """An ordered frame tensor with a constant gesture label.

    frames: float tensor [T, h, w, c], pixel values in [0, 1].
    """

    frames: torch.Tensor
    gesture: Gesture
    clip_id: str
    source: str = "synthetic"  # "synthetic" | "ingested"

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be [T, h, w, c], got {tuple(self.frames.shape)}")
        if self.frames.shape[0] < 2:
            raise ValueError(f"clip needs at least 2 frames, got {self.frames.shape[0]}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_size(self) -> int:
        return self.frames.shape[1]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    gesture: Gesture
    frame_count: int
    split: str  # "train" | "test"
    start_frame: int = 0  # first frame index for ingested segments


@dataclass
class ClipManifest:
    """Index of all clips in a dataset directory."""

    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.clip_id for e in self.entries]
        if len(ids) != len(set(ids)):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate clip ids in manifest: {dup}")

    def split(self, which: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == which]

    def find(self, clip_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise KeyError(f"clip id {clip_id!r} not found in manifest")
