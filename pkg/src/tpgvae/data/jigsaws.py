"""Ingestion for surgical-video directory trees.

Expected layout::

    root/video/<video_id>/frame_%06d.png
    root/transcriptions/<video_id>.txt

Transcription lines are `start_frame end_frame gesture_token`. Each labeled
segment becomes one manifest entry; splits are assigned by user id with the
last `n_test_users` users (sorted) held out for testing.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .types import ClipManifest, Gesture, ManifestEntry, VideoClip

VIDEO_DIR = "video"
TRANSCRIPTION_DIR = "transcriptions"
FRAME_PATTERN = "frame_{:06d}.png"

_USER_RE = re.compile(r"([A-Za-z])\d+$")


class ParseError(Exception):
    """Raised for malformed transcription files; the message names the offender."""


def user_of(video_id: str) -> str:
    """User letter from ids like `Suturing_B001`; falls back to the last token."""
    tail = video_id.rsplit("_", 1)[-1]
    m = _USER_RE.match(tail)
    return m.group(1) if m else tail


def parse_transcription(path: Path) -> list[tuple[int, int, Gesture]]:
    segments = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 'start end token', got {line!r}"
                )
            try:
                start, end = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer frame bound in {line!r}") from exc
            if end < start:
                raise ParseError(f"{path}:{lineno}: end {end} precedes start {start}")
            try:
                gesture = Gesture.from_token(parts[2])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            segments.append((start, end, gesture))
    return segments


def load_manifest(root_path: Path, n_test_users: int = 2) -> ClipManifest:
    """Scan transcriptions into per-segment entries with a leave-users-out split."""
    root = Path(root_path)
    trans_dir = root / TRANSCRIPTION_DIR
    video_dir = root / VIDEO_DIR
    if not trans_dir.is_dir() or not video_dir.is_dir():
        raise FileNotFoundError(
            f"{root} is not a dataset root: need {TRANSCRIPTION_DIR}/ and {VIDEO_DIR}/"
        )
    trans_files = sorted(trans_dir.glob("*.txt"))
    if not trans_files:
        raise FileNotFoundError(f"no transcription files under {trans_dir}")

    users = sorted({user_of(p.stem) for p in trans_files})
    if len(users) <= n_test_users:
        raise ValueError(
            f"need more than {n_test_users} users to hold {n_test_users} out, found {len(users)}"
        )
    test_users = set(users[-n_test_users:])

    entries = []
    for trans_path in trans_files:
        video_id = trans_path.stem
        frame_root = video_dir / video_id
        if not frame_root.is_dir():
            raise FileNotFoundError(f"missing frame directory {frame_root}")
        split = "test" if user_of(video_id) in test_users else "train"
        for start, end, gesture in parse_transcription(trans_path):
            entries.append(
                ManifestEntry(
                    clip_id=f"{video_id}_{start:06d}",
                    path=f"{VIDEO_DIR}/{video_id}",
                    gesture=gesture,
                    frame_count=end - start + 1,
                    split=split,
                    start_frame=start,
                )
            )
    return ClipManifest(root=root, entries=entries)


def _load_frame(path: Path, size: int) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing frame file {path}")
    with Image.open(path) as img:
        img = img.convert("RGB")
        if img.size != (size, size):
            img = img.resize((size, size), Image.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0


def load_clip(manifest: ClipManifest, clip_id: str, size: int = 64) -> VideoClip:
    """Read one labeled segment's frames, resized to `size` x `size`, range [0, 1]."""
    entry = manifest.find(clip_id)
    frame_root = Path(manifest.root) / entry.path
    frames = np.stack(
        [
            _load_frame(frame_root / FRAME_PATTERN.format(i), size)
            for i in range(entry.start_frame, entry.start_frame + entry.frame_count)
        ]
    )
    return VideoClip(
        frames=torch.from_numpy(frames),
        gesture=entry.gesture,
        clip_id=entry.clip_id,
        source="ingested",
    )
