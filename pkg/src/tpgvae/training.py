"""Training: batched sequence loss, one optimizer step, and the epoch loop.

The epoch loop owns all run-to-run nondeterminism: batch order and noise
seeds derive from (config.seed, epoch), so a rerun with the same config
reproduces the loss sequence exactly on one device.
"""

from __future__ import annotations

import csv
import hashlib
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor

from .data.ops import one_hot_label
from .data.types import VideoClip
from .model import TPGModel, save_checkpoint
from .objective import LossBreakdown, TrainingConfig, gaussian_noise, kl_diag_gaussian
from .rollout import teacher_forced_pass

LOG_NAME = "training_log.csv"
LOG_COLUMNS = ("epoch", "recon_l1", "kl_content", "kl_motion", "total", "wall_time_s")


def collate_clips(clips: Sequence[VideoClip], T: int, n_l: int) -> tuple[Tensor, Tensor]:
    """Stack the first T frames and one-hot labels of a clip batch."""
    if not clips:
        raise ValueError("empty clip batch")
    for clip in clips:
        if clip.length < T:
            raise ValueError(f"clip {clip.clip_id!r} has {clip.length} frames, need {T}")
    frames = torch.stack([clip.frames[:T] for clip in clips])
    labels = torch.stack([one_hot_label(clip.gesture, n_l) for clip in clips])
    return frames, labels


def sequence_loss(
    clips: Sequence[VideoClip],
    model,
    config: TrainingConfig,
    noise_source: Callable[[Tensor], Tensor],
) -> LossBreakdown:
    """Teacher-forced loss over steps 2..T, averaged over the batch.

    Reconstruction is mean-per-element l1 within each frame, summed over
    time; each KL term is summed over latent dimensions and time. Returns
    tensor-valued terms so the total can be backpropagated.
    """
    frames, labels = collate_clips(clips, config.T, model.config.n_l)
    result = teacher_forced_pass(frames, labels, model, noise_source, config.t_p)

    parts = [] if result.reconstructions is None else [result.reconstructions]
    parts.append(result.predicted)
    generated = torch.cat(parts, dim=1)
    target = frames[:, 1 : config.T]
    recon = (generated - target).abs().mean(dim=(2, 3, 4)).sum(dim=1).mean()

    zero = torch.zeros((), dtype=frames.dtype, device=frames.device)
    kl_content, kl_motion = zero, zero.clone()
    for step in result.per_step_latents:
        if step.posterior_content is not None:
            kl_content = kl_content + kl_diag_gaussian(step.posterior_content, step.prior_content).mean()
        if step.posterior_motion is not None:
            kl_motion = kl_motion + kl_diag_gaussian(step.posterior_motion, step.prior_motion).mean()
    return LossBreakdown.of(recon, kl_content, kl_motion, config.beta)


def make_optimizer(model: TPGModel, config: TrainingConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )


def train_step(
    model: TPGModel,
    clips: Sequence[VideoClip],
    config: TrainingConfig,
    optimizer: torch.optim.Optimizer,
    noise_source: Callable[[Tensor], Tensor],
) -> LossBreakdown:
    """One gradient update; returns the pre-update loss as plain floats."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = sequence_loss(clips, model, config, noise_source)
    loss.total.backward()
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    return loss.detached()


def data_fingerprint(clips: Sequence[VideoClip]) -> str:
    digest = hashlib.sha256()
    for clip in clips:
        digest.update(clip.clip_id.encode())
        digest.update(clip.gesture.token.encode())
        digest.update(str(tuple(clip.frames.shape)).encode())
    return digest.hexdigest()[:16]


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def fit(
    model: TPGModel,
    clips: Sequence[VideoClip],
    config: TrainingConfig,
    out_dir: Path,
    *,
    optimizer: torch.optim.Optimizer | None = None,
    start_epoch: int = 1,
    checkpoint_every: int = 10,
    progress: Callable[[int, LossBreakdown], None] | None = None,
) -> list[LossBreakdown]:
    """Run epochs start_epoch..config.epochs with CSV logging and checkpoints.

    Writes `training_log.csv` (appending when resuming), a checkpoint every
    `checkpoint_every` epochs, `checkpoint_best.pt` on every improvement of
    the epoch-mean total, and `checkpoint_final.pt` at the end.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = optimizer or make_optimizer(model, config)
    fingerprint = data_fingerprint(clips)

    log_path = out_dir / LOG_NAME
    resume = start_epoch > 1 and log_path.exists()
    history: list[LossBreakdown] = []
    best_total = float("inf")

    def save(tag: str, epoch: int):
        save_checkpoint(
            out_dir / f"checkpoint_{tag}.pt",
            model,
            epoch=epoch,
            seed=config.seed,
            data_fingerprint=fingerprint,
            optimizer_state=optimizer.state_dict(),
        )

    with open(log_path, "a" if resume else "w", newline="") as fh:
        writer = csv.writer(fh)
        if not resume:
            writer.writerow(LOG_COLUMNS)
        for epoch in range(start_epoch, config.epochs + 1):
            tic = time.perf_counter()
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
            sums = np.zeros(4)
            n_seen = 0
            for b, idx in enumerate(_batches(len(clips), config.batch_size, rng)):
                batch = [clips[i] for i in idx]
                noise = gaussian_noise(config.seed * 1_000_003 + epoch * 1_009 + b)
                loss = train_step(model, batch, config, optimizer, noise)
                sums += len(batch) * np.array(
                    [loss.recon_l1, loss.kl_content, loss.kl_motion, loss.total]
                )
                n_seen += len(batch)
            mean = sums / n_seen
            epoch_loss = LossBreakdown(
                recon_l1=mean[0], kl_content=mean[1], kl_motion=mean[2],
                beta=config.beta, total=mean[3],
            )
            history.append(epoch_loss)
            writer.writerow(
                [epoch, f"{mean[0]:.8f}", f"{mean[1]:.8f}", f"{mean[2]:.8f}",
                 f"{mean[3]:.8f}", f"{time.perf_counter() - tic:.3f}"]
            )
            fh.flush()
            if epoch_loss.total < best_total:
                best_total = epoch_loss.total
                save("best", epoch)
            if checkpoint_every > 0 and epoch % checkpoint_every == 0:
                save(f"epoch{epoch:04d}", epoch)
            if progress is not None:
                progress(epoch, epoch_loss)
    save("final", config.epochs)
    return history
