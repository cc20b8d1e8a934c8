"""Variational training objective pieces.

Reparametrized sampling, the closed-form KL between diagonal Gaussians,
the loss breakdown container, and training hyperparameters. The sequence
loss itself lives in `training`, since it drives a teacher-forced pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .model import LatentGaussian


@dataclass(frozen=True)
class TrainingConfig:
    beta: float = 1e-4
    learning_rate: float = 1e-4
    T: int = 20
    t_p: int = 10
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float = 5.0

    def __post_init__(self):
        if not 1 <= self.t_p < self.T:
            raise ValueError(f"need 1 <= t_p < T, got t_p={self.t_p}, T={self.T}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        # learning_rate = 0 is allowed: it makes train_step a bitwise no-op,
        # which is useful for determinism checks.
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-batch loss terms; fields are scalars (floats or 0-dim tensors)."""

    recon_l1: Tensor | float
    kl_content: Tensor | float
    kl_motion: Tensor | float
    beta: float
    total: Tensor | float

    @classmethod
    def of(cls, recon_l1, kl_content, kl_motion, beta) -> "LossBreakdown":
        total = recon_l1 + beta * (kl_content + kl_motion)
        return cls(recon_l1, kl_content, kl_motion, beta, total)

    def detached(self) -> "LossBreakdown":
        to_f = lambda v: float(v.detach()) if isinstance(v, Tensor) else float(v)
        return LossBreakdown(
            recon_l1=to_f(self.recon_l1),
            kl_content=to_f(self.kl_content),
            kl_motion=to_f(self.kl_motion),
            beta=self.beta,
            total=to_f(self.total),
        )


def reparameterize(gauss: LatentGaussian, noise: Tensor) -> Tensor:
    """mean + exp(0.5 * log_var) * noise; differentiable in both parameters."""
    if noise.shape != gauss.mean.shape:
        raise ValueError(
            f"noise shape {tuple(noise.shape)} does not match mean {tuple(gauss.mean.shape)}"
        )
    return gauss.mean + torch.exp(0.5 * gauss.log_var) * noise


def kl_diag_gaussian(q: LatentGaussian, p: LatentGaussian) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last dimension.

    Batched inputs [B, d] give per-row KLs [B]; plain vectors give a scalar.
    """
    if q.mean.shape != p.mean.shape:
        raise ValueError(
            f"Gaussian widths differ: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}"
        )
    var_q = torch.exp(q.log_var)
    var_p = torch.exp(p.log_var)
    term = p.log_var - q.log_var + (var_q + (q.mean - p.mean) ** 2) / var_p - 1.0
    return 0.5 * term.sum(dim=-1)


def gaussian_noise(seed: int):
    """Noise source drawing standard normals from a private seeded generator."""
    gen = torch.Generator().manual_seed(int(seed))

    def draw(like: Tensor) -> Tensor:
        return torch.randn(like.shape, generator=gen, dtype=like.dtype, device=like.device)

    return draw


def zero_noise(like: Tensor) -> Tensor:
    return torch.zeros_like(like)
