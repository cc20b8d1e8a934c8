"""Deterministic synthetic dual-arm gesture clips.

Each clip shows two articulated two-segment arms over a static textured
background. The gesture class selects per-arm joint-angle trajectories;
per-clip phase offsets and amplitude scales come from a seeded generator,
so rendering is a pure function of (class, seed, length).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .types import Gesture, N_GESTURES, VideoClip

DEFAULT_FRAME_SIZE = 64
EDGE_MARGIN = 3.0  # joints must keep this many pixels from the border

_SEG_HALF_WIDTH = 1.5
_TIP_RADIUS = 2.2
_AA = 1.0  # soft-edge falloff in pixels

# Arm tints for 3-channel rendering (left warm, right cool).
_TINT_LEFT = np.array([1.0, 0.82, 0.70], dtype=np.float32)
_TINT_RIGHT = np.array([0.70, 0.85, 1.0], dtype=np.float32)


def _smoothstep(x: float) -> float:
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class ArmPath:
    """Joint-angle trajectory for one two-segment arm.

    Angles are radians from the +x axis (screen coords, y down); the
    right arm uses base angles near pi so it reaches into the frame.
    `sweep` is a linear drift over the clip, `wobble` a sinusoidal
    oscillation scaled by the per-clip amplitude knob, and `extend`
    scales the segment lengths from start to end of the clip.
    """

    anchor: tuple[float, float]
    lengths: tuple[float, float]
    base: tuple[float, float]
    sweep: tuple[float, float]
    wobble: tuple[float, float]
    rate: float
    extend: tuple[float, float] = (1.0, 1.0)

    def pose(self, tau: float, phase: float, amp: float):
        """Anchor, elbow, and tip positions at normalized time tau in [0, 1]."""
        osc = math.sin(2.0 * math.pi * self.rate * tau + phase)
        osc2 = math.sin(2.0 * math.pi * self.rate * tau + phase + 1.3)
        a1 = self.base[0] + self.sweep[0] * tau + self.wobble[0] * amp * osc
        a2 = self.base[1] + self.sweep[1] * tau + self.wobble[1] * amp * osc2
        reach = self.extend[0] + (self.extend[1] - self.extend[0]) * _smoothstep(tau)
        l1 = self.lengths[0] * reach
        l2 = self.lengths[1] * reach
        ax, ay = self.anchor
        jx = ax + l1 * math.cos(a1)
        jy = ay + l1 * math.sin(a1)
        tx = jx + l2 * math.cos(a1 + a2)
        ty = jy + l2 * math.sin(a1 + a2)
        return (ax, ay), (jx, jy), (tx, ty)


@dataclass(frozen=True)
class SynthGestureScript:
    gesture: Gesture
    left: ArmPath
    right: ArmPath


_LEFT_ANCHOR = (10.0, 36.0)
_RIGHT_ANCHOR = (54.0, 28.0)
_LENGTHS = (12.0, 10.0)

SCRIPTS: dict[Gesture, SynthGestureScript] = {
    # Left arm sweeps from upper-left toward the field center.
    Gesture.APPROACH: SynthGestureScript(
        Gesture.APPROACH,
        left=ArmPath(_LEFT_ANCHOR, _LENGTHS, (-0.45, 0.25), (0.55, -0.35),
                     (0.06, 0.18), rate=1.5, extend=(0.9, 1.0)),
        right=ArmPath(_RIGHT_ANCHOR, _LENGTHS, (math.pi + 0.35, 0.30), (0.0, 0.0),
                      (0.05, 0.08), rate=2.0),
    ),
    # Right arm pushes toward the center with a strong push-retract cycle.
    Gesture.PUSH: SynthGestureScript(
        Gesture.PUSH,
        left=ArmPath(_LEFT_ANCHOR, _LENGTHS, (-0.10, 0.20), (0.15, 0.0),
                     (0.05, 0.10), rate=1.0),
        right=ArmPath(_RIGHT_ANCHOR, _LENGTHS, (math.pi - 0.10, 0.55), (0.0, -0.15),
                      (0.10, 0.45), rate=2.0, extend=(0.85, 1.0)),
    ),
    # Left arm unfolds into the field while the right arm backs off.
    Gesture.HANDOFF: SynthGestureScript(
        Gesture.HANDOFF,
        left=ArmPath(_LEFT_ANCHOR, _LENGTHS, (0.05, 0.35), (-0.10, -0.30),
                     (0.05, 0.12), rate=1.0, extend=(0.45, 1.0)),
        right=ArmPath(_RIGHT_ANCHOR, _LENGTHS, (math.pi + 0.25, 0.40), (0.20, 0.10),
                      (0.06, 0.10), rate=1.0, extend=(1.0, 0.8)),
    ),
    # Left arm retracts and rotates away from the center.
    Gesture.PULL: SynthGestureScript(
        Gesture.PULL,
        left=ArmPath(_LEFT_ANCHOR, _LENGTHS, (0.15, 0.30), (-0.75, -0.20),
                     (0.07, 0.12), rate=1.2, extend=(1.0, 0.7)),
        right=ArmPath(_RIGHT_ANCHOR, _LENGTHS, (math.pi - 0.20, 0.35), (-0.15, 0.10),
                      (0.06, 0.12), rate=1.6),
    ),
}


@dataclass(frozen=True)
class ClipKnobs:
    """Per-clip stochastic parameters, drawn once from the clip seed."""

    phase_left: float
    phase_right: float
    amp_left: float
    amp_right: float
    blobs: tuple[tuple[float, float, float, float], ...]  # (cx, cy, sigma, height)


def _draw_knobs(rng: np.random.Generator, size: int) -> ClipKnobs:
    blobs = tuple(
        (
            float(rng.uniform(0.15 * size, 0.85 * size)),
            float(rng.uniform(0.15 * size, 0.85 * size)),
            float(rng.uniform(5.0, 12.0)),
            float(rng.uniform(0.04, 0.10)),
        )
        for _ in range(3)
    )
    return ClipKnobs(
        phase_left=float(rng.uniform(0.0, 2.0 * math.pi)),
        phase_right=float(rng.uniform(0.0, 2.0 * math.pi)),
        amp_left=float(rng.uniform(0.8, 1.2)),
        amp_right=float(rng.uniform(0.8, 1.2)),
        blobs=blobs,
    )


@lru_cache(maxsize=4)
def _pixel_grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    return xs + 0.5, ys + 0.5


def _segment_coverage(xs, ys, p0, p1, half_width: float):
    vx = p1[0] - p0[0]
    vy = p1[1] - p0[1]
    seg_len2 = max(vx * vx + vy * vy, 1e-9)
    t = np.clip(((xs - p0[0]) * vx + (ys - p0[1]) * vy) / seg_len2, 0.0, 1.0)
    dx = xs - (p0[0] + t * vx)
    dy = ys - (p0[1] + t * vy)
    d = np.sqrt(dx * dx + dy * dy)
    return np.clip((half_width + _AA - d) / _AA, 0.0, 1.0)


def _disc_coverage(xs, ys, center, radius: float):
    d = np.sqrt((xs - center[0]) ** 2 + (ys - center[1]) ** 2)
    return np.clip((radius + _AA - d) / _AA, 0.0, 1.0)


def _render_background(knobs: ClipKnobs, size: int) -> np.ndarray:
    xs, ys = _pixel_grid(size)
    half = size / 2.0
    r2 = ((xs - half) ** 2 + (ys - half) ** 2) / (2.0 * half * half)
    bg = 0.10 + 0.08 * (1.0 - r2)
    for cx, cy, sigma, height in knobs.blobs:
        bg = bg + height * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    return np.clip(bg, 0.0, 1.0).astype(np.float32)


def _render_arm(xs, ys, path: ArmPath, tau: float, phase: float, amp: float, size: int):
    # Skeleton coordinates live in 64-unit space; scale to the target frame.
    scale = size / DEFAULT_FRAME_SIZE
    margin = EDGE_MARGIN * scale
    anchor, joint, tip = (
        (px * scale, py * scale) for px, py in path.pose(tau, phase, amp)
    )
    for px, py in (anchor, joint, tip):
        if not (margin <= px <= size - margin and margin <= py <= size - margin):
            raise RuntimeError(
                f"arm left the frame at tau={tau:.3f}: point ({px:.1f}, {py:.1f})"
            )
    layer = _segment_coverage(xs, ys, anchor, joint, _SEG_HALF_WIDTH) * 0.75
    layer = np.maximum(layer, _segment_coverage(xs, ys, joint, tip, _SEG_HALF_WIDTH) * 0.85)
    layer = np.maximum(layer, _disc_coverage(xs, ys, tip, _TIP_RADIUS) * 0.95)
    return layer


def render_frame(
    script: SynthGestureScript,
    knobs: ClipKnobs,
    tau: float,
    size: int = DEFAULT_FRAME_SIZE,
    channels: int = 3,
) -> np.ndarray:
    """Render one frame as float32 [size, size, channels] in [0, 1]."""
    xs, ys = _pixel_grid(size)
    bg = _render_background(knobs, size)
    left = _render_arm(xs, ys, script.left, tau, knobs.phase_left, knobs.amp_left, size)
    right = _render_arm(xs, ys, script.right, tau, knobs.phase_right, knobs.amp_right, size)
    if channels == 1:
        frame = np.maximum(bg, np.maximum(left, right))
        return frame[..., None].astype(np.float32)
    if channels == 3:
        frame = np.maximum(
            bg[..., None],
            np.maximum(left[..., None] * _TINT_LEFT, right[..., None] * _TINT_RIGHT),
        )
        return np.clip(frame, 0.0, 1.0).astype(np.float32)
    raise ValueError(f"unsupported channel count {channels}; expected 1 or 3")


def generate_synthetic_clip(
    class_id: Gesture | int,
    seed: int,
    length: int,
    *,
    size: int = DEFAULT_FRAME_SIZE,
    channels: int = 3,
    clip_id: str | None = None,
) -> VideoClip:
    """Render a labeled clip; bit-identical for equal (class, seed, length)."""
    gesture = class_id if isinstance(class_id, Gesture) else Gesture.from_index(class_id)
    if length < 2:
        raise ValueError(f"clip length must be >= 2, got {length}")
    script = SCRIPTS[gesture]
    rng = np.random.default_rng(np.random.SeedSequence([gesture.index, int(seed)]))
    knobs = _draw_knobs(rng, size)
    frames = np.empty((length, size, size, channels), dtype=np.float32)
    for t in range(length):
        tau = t / (length - 1)
        frames[t] = render_frame(script, knobs, tau, size=size, channels=channels)
    return VideoClip(
        frames=torch.from_numpy(frames),
        gesture=gesture,
        clip_id=clip_id or f"{gesture.name.lower()}_s{seed:06d}",
        source="synthetic",
    )


def build_synthetic_dataset(
    clips_per_class: int,
    length: int,
    seed: int,
    *,
    size: int = DEFAULT_FRAME_SIZE,
    channels: int = 3,
) -> list[VideoClip]:
    """Class-balanced clip list: exactly clips_per_class clips per gesture."""
    clips = []
    for gesture in Gesture:
        for i in range(clips_per_class):
            clip_seed = seed * 100_000 + i
            clips.append(
                generate_synthetic_clip(
                    gesture,
                    clip_seed,
                    length,
                    size=size,
                    channels=channels,
                    clip_id=f"{gesture.name.lower()}_{i:04d}",
                )
            )
    assert len(clips) == clips_per_class * N_GESTURES
    return clips
