"""On-disk dataset layout: `root/manifest.json` plus `root/clips/<id>.bin`.

Clip files are a 24-byte little-endian header (magic, version, dtype code,
T, h, w, c) followed by flat float32 frame data. The manifest is a single
JSON document listing every clip with its gesture and split.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
import torch

from .types import ClipManifest, Gesture, ManifestEntry, VideoClip

_MAGIC = b"TPGC"
_VERSION = 1
_DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4sHH4I")

MANIFEST_NAME = "manifest.json"
CLIP_DIR = "clips"


class ClipStoreError(Exception):
    """Raised for corrupt or incompatible clip files and manifests."""


def write_clip(path: Path, clip: VideoClip) -> None:
    frames = clip.frames.detach().cpu().numpy().astype("<f4", copy=False)
    t, h, w, c = frames.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, _DTYPE_FLOAT32, t, h, w, c))
        fh.write(frames.tobytes())


def read_clip_header(path: Path) -> tuple[int, int, int, int]:
    """Frame-tensor shape (T, h, w, c) from the file header alone."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ClipStoreError(f"{path}: truncated header")
    magic, version, dtype, t, h, w, c = _HEADER.unpack(raw)
    if magic != _MAGIC:
        raise ClipStoreError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ClipStoreError(f"{path}: unsupported version {version}")
    if dtype != _DTYPE_FLOAT32:
        raise ClipStoreError(f"{path}: unsupported dtype code {dtype}")
    return t, h, w, c


def read_clip(path: Path, gesture: Gesture, clip_id: str) -> VideoClip:
    t, h, w, c = read_clip_header(path)
    expected = t * h * w * c
    data = np.fromfile(path, dtype="<f4", offset=_HEADER.size)
    if data.size != expected:
        raise ClipStoreError(
            f"{path}: payload holds {data.size} values, header promises {expected}"
        )
    frames = torch.from_numpy(data.reshape(t, h, w, c).copy())
    return VideoClip(frames=frames, gesture=gesture, clip_id=clip_id, source="ingested")


def assign_splits(clips: list[VideoClip], test_fraction: float) -> list[str]:
    """Per-class split labels; the last ceil(fraction * n) clips of each class test."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    counts: dict[Gesture, int] = {}
    for clip in clips:
        counts[clip.gesture] = counts.get(clip.gesture, 0) + 1
    n_test = {g: math.ceil(n * test_fraction) for g, n in counts.items()}
    seen: dict[Gesture, int] = {g: 0 for g in counts}
    labels = []
    for clip in clips:
        seen[clip.gesture] += 1
        boundary = counts[clip.gesture] - n_test[clip.gesture]
        labels.append("test" if seen[clip.gesture] > boundary else "train")
    return labels


def write_dataset(root: Path, clips: list[VideoClip], test_fraction: float = 0.2) -> ClipManifest:
    """Write all clips plus a manifest; returns the manifest that was written."""
    root = Path(root)
    clip_dir = root / CLIP_DIR
    clip_dir.mkdir(parents=True, exist_ok=True)
    splits = assign_splits(clips, test_fraction)
    entries = []
    for clip, split in zip(clips, splits):
        rel = f"{CLIP_DIR}/{clip.clip_id}.bin"
        write_clip(root / rel, clip)
        entries.append(
            ManifestEntry(
                clip_id=clip.clip_id,
                path=rel,
                gesture=clip.gesture,
                frame_count=clip.length,
                split=split,
            )
        )
    manifest = ClipManifest(root=root, entries=entries)
    payload = {
        "version": _VERSION,
        "clips": [
            {
                "clip_id": e.clip_id,
                "path": e.path,
                "gesture": e.gesture.token,
                "frame_count": e.frame_count,
                "split": e.split,
            }
            for e in entries
        ],
    }
    with open(root / MANIFEST_NAME, "w") as fh:
        json.dump(payload, fh, indent=1)
    return manifest


def load_dataset(root: Path) -> ClipManifest:
    """Read and validate a manifest; every listed clip must exist with the stated length."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {root}")
    with open(manifest_path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ClipStoreError(f"{manifest_path}: invalid JSON ({exc})") from exc
    entries = []
    for rec in payload.get("clips", []):
        entry = ManifestEntry(
            clip_id=rec["clip_id"],
            path=rec["path"],
            gesture=Gesture.from_token(rec["gesture"]),
            frame_count=int(rec["frame_count"]),
            split=rec["split"],
        )
        t, _, _, _ = read_clip_header(root / entry.path)
        if t != entry.frame_count:
            raise ClipStoreError(
                f"{entry.clip_id}: manifest says {entry.frame_count} frames, file has {t}"
            )
        entries.append(entry)
    return ClipManifest(root=root, entries=entries)


def load_clip(manifest: ClipManifest, clip_id: str) -> VideoClip:
    entry = manifest.find(clip_id)
    return read_clip(Path(manifest.root) / entry.path, entry.gesture, entry.clip_id)
