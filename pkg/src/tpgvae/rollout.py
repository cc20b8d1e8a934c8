"""Sequence procedures: teacher-forced pass, prior-mean inference, sampling.

Time indices follow the frame axis (python index i holds step t = i + 1).
All three procedures thread per-core recurrent state explicitly, so a
rollout can be split into prepare + continue without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import torch
from torch import Tensor

from .data.ops import frame_difference
from .model import LatentGaussian, RecurrentState, TPGModel, VARIANTS, VariantSpec
from .objective import gaussian_noise, reparameterize


class StepLatents(NamedTuple):
    t: int  # 1-based time step the Gaussians describe
    posterior_content: LatentGaussian | None
    prior_content: LatentGaussian | None
    posterior_motion: LatentGaussian | None
    prior_motion: LatentGaussian | None


@dataclass
class RolloutResult:
    predicted: Tensor  # [B, n_predicted, h, w, c]
    reconstructions: Tensor | None  # [B, t_p - 1, h, w, c] for teacher forcing
    per_step_latents: list[StepLatents] | None
    mode: str  # teacher_forced | prior_mean | sampled


@dataclass(frozen=True)
class RolloutState:
    """Everything needed to generate the next frame; safe to share and fork."""

    states: dict[str, RecurrentState]
    skips: tuple[Tensor, ...]  # frozen at the last ground-truth frame
    last_frame: Tensor  # [B, h, w, c]
    h_prev: Tensor
    m_prev: Tensor | None
    labels: Tensor | None
    next_t: int  # 1-based step the next generation produces


def _resolve_variant(model: TPGModel, variant: VariantSpec | str | None) -> VariantSpec:
    if variant is None:
        return model.variant
    if isinstance(variant, str):
        variant = VARIANTS[variant]
    if variant != model.variant:
        raise ValueError(
            f"model was built for variant {model.variant.name!r}, asked to run {variant.name!r}"
        )
    return variant


def _check_labels(variant: VariantSpec, labels: Tensor | None, batch: int, n_l: int):
    if not variant.label:
        return None
    if labels is None:
        raise ValueError(f"variant {variant.name!r} needs one-hot labels")
    if labels.shape != (batch, n_l):
        raise ValueError(f"labels must be [{batch}, {n_l}], got {tuple(labels.shape)}")
    return labels


def _zero_delta(frames: Tensor) -> Tensor:
    b, h, w, _ = frames.shape
    return torch.zeros(b, h, w, 1, dtype=frames.dtype, device=frames.device)


def teacher_forced_pass(
    frames: Tensor,
    labels: Tensor | None,
    model: TPGModel,
    noise_source: Callable[[Tensor], Tensor],
    t_p: int,
    variant: VariantSpec | str | None = None,
) -> RolloutResult:
    """Posterior-sampled reconstruction of steps 2..T from ground-truth inputs.

    Skips come from the previous ground-truth frame while t <= t_p and stay
    frozen at frame t_p afterwards, matching the inference-time contract.
    """
    v = _resolve_variant(model, variant)
    if frames.ndim != 5:
        raise ValueError(f"expected frames [B, T, h, w, c], got {tuple(frames.shape)}")
    B, T = frames.shape[:2]
    if T < 2:
        raise ValueError(f"need at least 2 frames, got {T}")
    if not 1 <= t_p < T:
        raise ValueError(f"need 1 <= t_p < T, got t_p={t_p}, T={T}")
    L = _check_labels(v, labels, B, model.config.n_l)

    feats = [model.encode_content(frames[:, i]) for i in range(T)]
    if v.motion:
        deltas = [_zero_delta(frames[:, 0])]
        deltas += [frame_difference(frames[:, i - 1], frames[:, i]) for i in range(1, T)]
        motion = [model.encode_motion(d) for d in deltas]
    states = model.init_states(B, device=frames.device, dtype=frames.dtype)

    recon, predicted, latents = [], [], []
    for i in range(1, T):
        C = M = None
        post_c = prior_c = post_m = prior_m = None
        if v.content:
            post_c, states["posterior_content"] = model.posterior_step(
                "content", feats[i].h, states["posterior_content"]
            )
            prior_c, states["prior_content"] = model.prior_step(
                "content", feats[i - 1].h, states["prior_content"]
            )
            C = reparameterize(post_c, noise_source(post_c.mean))
        if v.motion:
            post_m, states["posterior_motion"] = model.posterior_step(
                "motion", motion[i], states["posterior_motion"]
            )
            prior_m, states["prior_motion"] = model.prior_step(
                "motion", motion[i - 1], states["prior_motion"]
            )
            M = reparameterize(post_m, noise_source(post_m.mean))
        z = model.assemble_latent(C, M, L)
        g, states["predictor"] = model.predictor_step(feats[i - 1].h, z, states["predictor"])
        frame = model.decode(g, feats[min(i - 1, t_p - 1)].skips)
        latents.append(StepLatents(i + 1, post_c, prior_c, post_m, prior_m))
        (recon if i <= t_p - 1 else predicted).append(frame)

    return RolloutResult(
        predicted=torch.stack(predicted, dim=1),
        reconstructions=torch.stack(recon, dim=1) if recon else None,
        per_step_latents=latents,
        mode="teacher_forced",
    )


def prepare_rollout(
    observed: Tensor,
    labels: Tensor | None,
    model: TPGModel,
    variant: VariantSpec | str | None = None,
) -> RolloutState:
    """Warm up prior and predictor states over the observation window."""
    v = _resolve_variant(model, variant)
    if observed.ndim != 5:
        raise ValueError(f"expected observed [B, t_p, h, w, c], got {tuple(observed.shape)}")
    B, t_p = observed.shape[:2]
    if t_p < 2:
        raise ValueError(f"need at least 2 observed frames, got {t_p}")
    L = _check_labels(v, labels, B, model.config.n_l)

    feats = [model.encode_content(observed[:, i]) for i in range(t_p)]
    motion = None
    if v.motion:
        deltas = [_zero_delta(observed[:, 0])]
        deltas += [frame_difference(observed[:, i - 1], observed[:, i]) for i in range(1, t_p)]
        motion = [model.encode_motion(d) for d in deltas]
    states = model.init_states(B, device=observed.device, dtype=observed.dtype)

    for i in range(1, t_p):
        C = M = None
        if v.content:
            gauss, states["prior_content"] = model.prior_step(
                "content", feats[i - 1].h, states["prior_content"]
            )
            C = gauss.mean
        if v.motion:
            gauss, states["prior_motion"] = model.prior_step(
                "motion", motion[i - 1], states["prior_motion"]
            )
            M = gauss.mean
        z = model.assemble_latent(C, M, L)
        _, states["predictor"] = model.predictor_step(feats[i - 1].h, z, states["predictor"])

    return RolloutState(
        states=states,
        skips=feats[t_p - 1].skips,
        last_frame=observed[:, t_p - 1],
        h_prev=feats[t_p - 1].h,
        m_prev=motion[t_p - 1] if v.motion else None,
        labels=L,
        next_t=t_p + 1,
    )


def continue_rollout(
    model: TPGModel,
    state: RolloutState,
    horizon: int,
    noise_source: Callable[[Tensor], Tensor] | None = None,
) -> tuple[Tensor, RolloutState]:
    """Generate `horizon` frames from a prepared state, feeding back outputs.

    With noise_source None the latents are the prior means (deterministic);
    otherwise C and M are reparametrized samples from the prior Gaussians.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    v = model.variant
    frames = []
    for _ in range(horizon):
        states = dict(state.states)
        C = M = None
        if v.content:
            gauss, states["prior_content"] = model.prior_step(
                "content", state.h_prev, states["prior_content"]
            )
            C = gauss.mean if noise_source is None else reparameterize(gauss, noise_source(gauss.mean))
        if v.motion:
            gauss, states["prior_motion"] = model.prior_step(
                "motion", state.m_prev, states["prior_motion"]
            )
            M = gauss.mean if noise_source is None else reparameterize(gauss, noise_source(gauss.mean))
        z = model.assemble_latent(C, M, state.labels)
        g, states["predictor"] = model.predictor_step(state.h_prev, z, states["predictor"])
        frame = model.decode(g, state.skips)
        frames.append(frame)
        delta = frame_difference(state.last_frame, frame)
        state = replace(
            state,
            states=states,
            last_frame=frame,
            h_prev=model.encode_content(frame).h,
            m_prev=model.encode_motion(delta) if v.motion else None,
            next_t=state.next_t + 1,
        )
    return torch.stack(frames, dim=1), state


def prior_mean_rollout(
    observed: Tensor,
    labels: Tensor | None,
    model: TPGModel,
    horizon: int,
    variant: VariantSpec | str | None = None,
) -> RolloutResult:
    """Deterministic inference: latents are prior means, no sampling anywhere."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    state = prepare_rollout(observed, labels, model, variant)
    frames, _ = continue_rollout(model, state, horizon, noise_source=None)
    return RolloutResult(predicted=frames, reconstructions=None, per_step_latents=None, mode="prior_mean")


def sampled_rollout(
    observed: Tensor,
    labels: Tensor | None,
    model: TPGModel,
    horizon: int,
    k: int,
    seed: int,
    variant: VariantSpec | str | None = None,
    noise_factory: Callable[[int], Callable[[Tensor], Tensor]] | None = None,
) -> list[RolloutResult]:
    """k independent rollouts sampling C, M from the prior Gaussians.

    Sample i draws its noise from a generator seeded with (seed, i), so the
    set is reproducible and its members are mutually independent.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    base = prepare_rollout(observed, labels, model, variant)
    factory = noise_factory or (lambda sub_seed: gaussian_noise(sub_seed))
    results = []
    for i in range(k):
        noise = factory(int(seed) * 1_000_003 + i)
        frames, _ = continue_rollout(model, base, horizon, noise_source=noise)
        results.append(
            RolloutResult(predicted=frames, reconstructions=None, per_step_latents=None, mode="sampled")
        )
    return results
