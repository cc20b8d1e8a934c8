"""Frame-quality metrics, best-of-k selection, and per-horizon aggregation.

All metrics are pure functions computed in float64. Frames are channel-last
with values in [0, 1]; torch tensors and numpy arrays are both accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.signal import convolve2d

from .data.ops import GRAY_WEIGHTS
from .rollout import RolloutResult

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_f64(frame) -> np.ndarray:
    if isinstance(frame, torch.Tensor):
        frame = frame.detach().cpu().numpy()
    return np.asarray(frame, dtype=np.float64)


def _gray2d(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return frame
    if frame.ndim != 3:
        raise ValueError(f"expected [h, w] or [h, w, c] frame, got shape {frame.shape}")
    c = frame.shape[-1]
    if c == 1:
        return frame[..., 0]
    if c == 3:
        return frame @ np.asarray(GRAY_WEIGHTS, dtype=np.float64)
    raise ValueError(f"unsupported channel count {c}")


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB, capped at 100 for identical frames."""
    a, b = _as_f64(a), _as_f64(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a, b) -> float:
    """Mean local SSIM over an 11x11 Gaussian window, valid mode, grayscale.

    Stabilizers C1 = (K1 L)^2, C2 = (K2 L)^2 with L = 1 for [0, 1] frames.
    """
    a = _gray2d(_as_f64(a))
    b = _gray2d(_as_f64(b))
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"frame {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = convolve2d(a, w, mode="valid")
    mu_b = convolve2d(b, w, mode="valid")
    var_a = convolve2d(a * a, w, mode="valid") - mu_a * mu_a
    var_b = convolve2d(b * b, w, mode="valid") - mu_b * mu_b
    cov = convolve2d(a * b, w, mode="valid") - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


class FeatureEmbedder(torch.nn.Module):
    """Frozen fixed-seed conv net mapping one frame to an embedding vector.

    A stand-in for a pretrained classifier backbone: cosine similarities are
    internally consistent but not comparable across embedders or to values
    computed with real pretrained features.
    """

    def __init__(self, seed: int = 0, embed_dim: int = 64):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = torch.nn.Sequential(
                torch.nn.Conv2d(1, 8, 3, stride=2, padding=1),
                torch.nn.ELU(),
                torch.nn.Conv2d(8, 16, 3, stride=2, padding=1),
                torch.nn.ELU(),
                torch.nn.Conv2d(16, 32, 3, stride=2, padding=1),
                torch.nn.ELU(),
                torch.nn.AdaptiveAvgPool2d(4),
                torch.nn.Flatten(),
                torch.nn.Linear(32 * 16, embed_dim),
            )
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, frame) -> np.ndarray:
        x = torch.as_tensor(_gray2d(_as_f64(frame)), dtype=torch.float32)
        out = self.net(x[None, None])
        return out[0].numpy().astype(np.float64)


def feature_cosine(a, b, embedder) -> float:
    """Cosine similarity between embedder(a) and embedder(b)."""
    ea = np.asarray(embedder(a), dtype=np.float64)
    eb = np.asarray(embedder(b), dtype=np.float64)
    na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(np.dot(ea, eb) / (na * nb))


def best_of_k(samples: list[RolloutResult], truth, metric) -> RolloutResult:
    """Sample maximizing the horizon-mean metric; ties go to the lowest index.

    `truth` is [horizon, h, w, c]; each sample's predicted frames must hold a
    single clip ([horizon, ...] or [1, horizon, ...]).
    """
    if not samples:
        raise ValueError("need at least one sample")
    truth = _as_f64(truth)
    best_idx, best_score = 0, -np.inf
    for i, sample in enumerate(samples):
        frames = sample.predicted
        if frames.ndim == 5:
            if frames.shape[0] != 1:
                raise ValueError("best_of_k operates on single-clip rollouts")
            frames = frames[0]
        if frames.shape[0] != truth.shape[0]:
            raise ValueError(
                f"sample {i} has {frames.shape[0]} frames, truth has {truth.shape[0]}"
            )
        score = float(np.mean([metric(frames[t], truth[t]) for t in range(truth.shape[0])]))
        if score > best_score:
            best_idx, best_score = i, score
    return samples[best_idx]


@dataclass(frozen=True)
class MetricSeries:
    """Per-step metric values for one (clip, variant) pair.

    t_start is the absolute time label of per_step[0] (clip frames count
    from t = 1, so the first predicted step is t_p + 1).
    """

    metric: str
    per_step: np.ndarray
    clip_id: str
    variant: str
    t_start: int


def compute_series(
    predicted,
    truth,
    clip_id: str,
    variant: str,
    t_start: int,
    metrics: dict[str, object],
) -> list[MetricSeries]:
    """Evaluate every named metric per step; metrics map name -> callable."""
    predicted = _as_f64(predicted)
    truth = _as_f64(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    horizon = predicted.shape[0]
    out = []
    for name, fn in metrics.items():
        values = np.array([fn(predicted[t], truth[t]) for t in range(horizon)])
        out.append(MetricSeries(name, values, clip_id, variant, t_start))
    return out


@dataclass(frozen=True)
class AggregateRow:
    variant: str
    metric: str
    t: int
    mean: float
    std: float


@dataclass(frozen=True)
class AggregateTable:
    rows: tuple[AggregateRow, ...]

    def at(self, variant: str, metric: str) -> list[AggregateRow]:
        return [r for r in self.rows if r.variant == variant and r.metric == metric]


def aggregate(series: list[MetricSeries]) -> AggregateTable:
    """Per-timestep mean and population std across clips.

    Every (variant, metric) group must cover the identical clip set and
    horizon, so the table compares variants on the same data.
    """
    if not series:
        raise ValueError("no series to aggregate")
    groups: dict[tuple[str, str], list[MetricSeries]] = {}
    for s in series:
        groups.setdefault((s.variant, s.metric), []).append(s)
    clip_sets = {key: tuple(sorted(s.clip_id for s in group)) for key, group in groups.items()}
    if len(set(clip_sets.values())) != 1:
        raise ValueError("variant/metric groups cover different clip sets")
    rows = []
    for (variant, metric), group in sorted(groups.items()):
        horizons = {(s.per_step.shape[0], s.t_start) for s in group}
        if len(horizons) != 1:
            raise ValueError(f"{variant}/{metric}: series disagree on horizon or t_start")
        values = np.stack([s.per_step for s in sorted(group, key=lambda s: s.clip_id)])
        t_start = group[0].t_start
        for step in range(values.shape[1]):
            col = values[:, step]
            rows.append(
                AggregateRow(
                    variant=variant,
                    metric=metric,
                    t=t_start + step,
                    mean=float(col.mean()),
                    std=float(col.std(ddof=0)),
                )
            )
    return AggregateTable(rows=tuple(rows))


TABLE_HEADER = ("variant", "metric", "t", "mean", "std")


def write_table(table: AggregateTable, path: Path, t_filter: list[int] | None = None) -> None:
    """CSV with header exactly (variant, metric, t, mean, std)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(TABLE_HEADER) + "\n")
        for row in table.rows:
            if t_filter is not None and row.t not in t_filter:
                continue
            fh.write(f"{row.variant},{row.metric},{row.t},{row.mean:.10g},{row.std:.10g}\n")


def read_table(path: Path) -> AggregateTable:
    path = Path(path)
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or tuple(lines[0].split(",")) != TABLE_HEADER:
        raise ValueError(f"{path}: missing or malformed header")
    rows = []
    for line in lines[1:]:
        variant, metric, t, mean, std = line.split(",")
        rows.append(AggregateRow(variant, metric, int(t), float(mean), float(std)))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return AggregateTable(rows=tuple(rows))


def write_series_csv(series: list[MetricSeries], path: Path) -> None:
    """Per-clip dump: one row per (variant, metric, clip, step)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("variant,metric,clip_id,t,value\n")
        for s in sorted(series, key=lambda s: (s.variant, s.metric, s.clip_id)):
            for step, value in enumerate(s.per_step):
                fh.write(f"{s.variant},{s.metric},{s.clip_id},{s.t_start + step},{value:.10g}\n")
