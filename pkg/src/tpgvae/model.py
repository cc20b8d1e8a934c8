"""Networks for ternary-prior video prediction.

Five recurrent cores (posterior content/motion, prior content/motion,
predictor), a VGG-flavored content encoder with per-scale skips, a thin
motion encoder over frame differences, and a skip-concatenating decoder.
Ablation variants mask latent parts; they never change the architecture
beyond the latent width fed to the predictor.

All public tensors are batch-leading; frames travel as [B, h, w, c] in
[0, 1] and are permuted to NCHW only inside the conv stacks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
from torch import Tensor, nn

LOG_VAR_BOUND = 10.0


@dataclass(frozen=True)
class ModelConfig:
    content_feature_dim: int = 128
    motion_feature_dim: int = 128
    latent_dim: int = 16
    predictor_feature_dim: int = 128
    recurrent_width: int = 256
    predictor_layers: int = 2
    n_l: int = 4
    channels: int = 3
    frame_size: int = 64

    def __post_init__(self):
        for name in (
            "content_feature_dim",
            "motion_feature_dim",
            "latent_dim",
            "predictor_feature_dim",
            "recurrent_width",
            "predictor_layers",
            "n_l",
            "channels",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        size = self.frame_size
        if size < 8 or size & (size - 1):
            raise ValueError(f"frame_size must be a power of two >= 8, got {size}")

    @property
    def n_blocks(self) -> int:
        # Each block halves the resolution; stop at a 4x4 top feature map.
        return int(math.log2(self.frame_size)) - 2


@dataclass(frozen=True)
class VariantSpec:
    """Which latent parts exist: the full model and its ablations."""

    name: str
    content: bool
    motion: bool
    label: bool

    def __post_init__(self):
        if not (self.content or self.motion):
            raise ValueError(
                f"variant {self.name!r} has no learned latent part; "
                "a label-only latent is not supported"
            )

    def latent_width(self, latent_dim: int, n_l: int) -> int:
        return latent_dim * (int(self.content) + int(self.motion)) + n_l * int(self.label)


VARIANTS: dict[str, VariantSpec] = {
    "tpg_vae": VariantSpec("tpg_vae", content=True, motion=True, label=True),
    "ml_vae": VariantSpec("ml_vae", content=False, motion=True, label=True),
    "cl_vae": VariantSpec("cl_vae", content=True, motion=False, label=True),
    "cm_vae": VariantSpec("cm_vae", content=True, motion=True, label=False),
    "m_vae": VariantSpec("m_vae", content=False, motion=True, label=False),
    "svg_lp_star": VariantSpec("svg_lp_star", content=True, motion=False, label=False),
}


class LatentGaussian(NamedTuple):
    mean: Tensor  # [B, latent_dim]
    log_var: Tensor  # [B, latent_dim], clamped to +/- LOG_VAR_BOUND


class RecurrentState(NamedTuple):
    hidden: tuple[Tensor, ...]  # per layer, each [B, width]
    cell: tuple[Tensor, ...]


class EncoderFeatures(NamedTuple):
    h: Tensor  # [B, feature_dim]
    skips: tuple[Tensor, ...] | None  # per-scale maps, finest first; None for motion


@dataclass
class TernaryLatent:
    """Latent parts for one step; inactive parts are None."""

    C: Tensor | None
    M: Tensor | None
    L: Tensor | None
    mask: VariantSpec

    @property
    def vector(self) -> Tensor:
        parts = [p for p in (self.C, self.M, self.L) if p is not None]
        return torch.cat(parts, dim=-1)

    @property
    def width(self) -> int:
        return self.vector.shape[-1]


def _content_widths(n_blocks: int) -> list[int]:
    return [min(32 << i, 256) for i in range(n_blocks)]


def _motion_widths(n_blocks: int) -> list[int]:
    return [max(w // 8, 1) for w in _content_widths(n_blocks)]


def _norm(channels: int) -> nn.Module:
    groups = 8 if channels % 8 == 0 else math.gcd(channels, 4)
    return nn.GroupNorm(max(groups, 1), channels)


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        _norm(c_out),
        nn.ELU(inplace=True),
    )


class ContentEncoder(nn.Module):
    """Conv blocks with 2x pooling down to 4x4, then flatten + affine + tanh."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.frame_size = config.frame_size
        self.channels = config.channels
        widths = _content_widths(config.n_blocks)
        blocks = []
        c_in = config.channels
        for w in widths:
            blocks.append(_conv_block(c_in, w))
            c_in = w
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)
        top = config.frame_size >> config.n_blocks
        self.fc = nn.Linear(widths[-1] * top * top, config.content_feature_dim)

    def forward(self, frames: Tensor) -> EncoderFeatures:
        if frames.ndim != 4 or frames.shape[1:] != (self.frame_size, self.frame_size, self.channels):
            raise ValueError(
                f"expected frames [B, {self.frame_size}, {self.frame_size}, "
                f"{self.channels}], got {tuple(frames.shape)}"
            )
        x = frames.permute(0, 3, 1, 2)
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        h = torch.tanh(self.fc(x.flatten(1)))
        return EncoderFeatures(h=h, skips=tuple(skips))


class MotionEncoder(nn.Module):
    """Same layout as the content encoder at one-eighth width; no skips."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.frame_size = config.frame_size
        widths = _motion_widths(config.n_blocks)
        blocks = []
        c_in = 1
        for w in widths:
            blocks.append(_conv_block(c_in, w))
            c_in = w
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)
        top = config.frame_size >> config.n_blocks
        self.fc = nn.Linear(widths[-1] * top * top, config.motion_feature_dim)

    def forward(self, delta: Tensor) -> Tensor:
        if delta.ndim != 4 or delta.shape[1:] != (self.frame_size, self.frame_size, 1):
            raise ValueError(
                f"expected deltas [B, {self.frame_size}, {self.frame_size}, 1], "
                f"got {tuple(delta.shape)}"
            )
        x = delta.permute(0, 3, 1, 2)
        for block in self.blocks:
            x = self.pool(block(x))
        return torch.tanh(self.fc(x.flatten(1)))


class Decoder(nn.Module):
    """Mirrors the content encoder: upsample, concat skip, conv; 1x1 + sigmoid."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = _content_widths(config.n_blocks)
        top = config.frame_size >> config.n_blocks
        self.top = top
        self.top_width = widths[-1]
        self.fc = nn.Sequential(
            nn.Linear(config.predictor_feature_dim, widths[-1] * top * top),
            nn.ELU(inplace=True),
        )
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        blocks = []
        c_in = widths[-1]
        for skip_w, out_w in zip(reversed(widths), [*reversed(widths[:-1]), widths[0]]):
            blocks.append(_conv_block(c_in + skip_w, out_w))
            c_in = out_w
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(widths[0], config.channels, 1)

    def forward(self, g: Tensor, skips: tuple[Tensor, ...]) -> Tensor:
        if len(skips) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} skip maps, got {len(skips)}")
        x = self.fc(g).view(-1, self.top_width, self.top, self.top)
        for block, skip in zip(self.blocks, reversed(skips)):
            x = self.upsample(x)
            if x.shape[-2:] != skip.shape[-2:]:
                raise ValueError(
                    f"skip spatial size {tuple(skip.shape[-2:])} does not match "
                    f"decoder scale {tuple(x.shape[-2:])}"
                )
            x = block(torch.cat([x, skip], dim=1))
        return torch.sigmoid(self.head(x)).permute(0, 2, 3, 1)


class LSTMStack(nn.Module):
    """Linear embedding into a stack of LSTMCells with explicit state threading."""

    def __init__(self, input_dim: int, width: int, layers: int):
        super().__init__()
        self.input_dim = input_dim
        self.width = width
        self.layers = layers
        self.embed = nn.Linear(input_dim, width)
        self.cells = nn.ModuleList(nn.LSTMCell(width, width) for _ in range(layers))
        for cell in self.cells:
            # Zero biases except the forget gate, opened at init.
            nn.init.zeros_(cell.bias_ih)
            nn.init.zeros_(cell.bias_hh)
            with torch.no_grad():
                cell.bias_ih[width : 2 * width].fill_(1.0)

    def init_state(self, batch: int, device=None, dtype=None) -> RecurrentState:
        zeros = lambda: torch.zeros(batch, self.width, device=device, dtype=dtype)
        return RecurrentState(
            hidden=tuple(zeros() for _ in range(self.layers)),
            cell=tuple(zeros() for _ in range(self.layers)),
        )

    def forward(self, x: Tensor, state: RecurrentState) -> tuple[Tensor, RecurrentState]:
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected feature width {self.input_dim}, got {x.shape[-1]}")
        hs, cs = [], []
        inp = self.embed(x)
        for cell, h_prev, c_prev in zip(self.cells, state.hidden, state.cell):
            h, c = cell(inp, (h_prev, c_prev))
            hs.append(h)
            cs.append(c)
            inp = h
        return inp, RecurrentState(hidden=tuple(hs), cell=tuple(cs))


class GaussianHead(nn.Module):
    """Two separate affine maps for mean and log-variance, the latter clamped."""

    def __init__(self, width: int, latent_dim: int):
        super().__init__()
        self.mean = nn.Linear(width, latent_dim)
        self.log_var = nn.Linear(width, latent_dim)

    def forward(self, x: Tensor) -> LatentGaussian:
        return LatentGaussian(
            mean=self.mean(x),
            log_var=torch.clamp(self.log_var(x), -LOG_VAR_BOUND, LOG_VAR_BOUND),
        )


class GaussianCore(nn.Module):
    """One recurrent Gaussian estimator (posterior or prior, content or motion)."""

    def __init__(self, input_dim: int, width: int, latent_dim: int):
        super().__init__()
        self.rnn = LSTMStack(input_dim, width, layers=1)
        self.head = GaussianHead(width, latent_dim)

    def init_state(self, batch: int, device=None, dtype=None) -> RecurrentState:
        return self.rnn.init_state(batch, device, dtype)

    def forward(self, feature: Tensor, state: RecurrentState) -> tuple[LatentGaussian, RecurrentState]:
        out, state = self.rnn(feature, state)
        return self.head(out), state


class PredictorCore(nn.Module):
    """Two-layer recurrent core over (h_prev, z); tanh-bounded feature output."""

    def __init__(self, input_dim: int, width: int, feature_dim: int, layers: int):
        super().__init__()
        self.rnn = LSTMStack(input_dim, width, layers=layers)
        self.head = nn.Linear(width, feature_dim)

    def init_state(self, batch: int, device=None, dtype=None) -> RecurrentState:
        return self.rnn.init_state(batch, device, dtype)

    def forward(self, x: Tensor, state: RecurrentState) -> tuple[Tensor, RecurrentState]:
        out, state = self.rnn(x, state)
        return torch.tanh(self.head(out)), state


class TPGModel(nn.Module):
    """Full prediction model for one variant.

    Cores for masked-out latent parts are not built: the variant decides
    which posterior/prior pairs exist and how wide the predictor input is.
    """

    STATE_NAMES = ("posterior_content", "posterior_motion", "prior_content", "prior_motion", "predictor")

    def __init__(self, config: ModelConfig, variant: VariantSpec | str = "tpg_vae"):
        super().__init__()
        if isinstance(variant, str):
            try:
                variant = VARIANTS[variant]
            except KeyError:
                raise ValueError(f"unknown variant {variant!r}; known: {sorted(VARIANTS)}") from None
        self.config = config
        self.variant = variant
        self.enc_c = ContentEncoder(config)
        self.dec = Decoder(config)
        w = config.recurrent_width
        if variant.content:
            self.posterior_content = GaussianCore(config.content_feature_dim, w, config.latent_dim)
            self.prior_content = GaussianCore(config.content_feature_dim, w, config.latent_dim)
        if variant.motion:
            self.enc_m = MotionEncoder(config)
            self.posterior_motion = GaussianCore(config.motion_feature_dim, w, config.latent_dim)
            self.prior_motion = GaussianCore(config.motion_feature_dim, w, config.latent_dim)
        self.z_width = variant.latent_width(config.latent_dim, config.n_l)
        self.predictor = PredictorCore(
            config.content_feature_dim + self.z_width,
            w,
            config.predictor_feature_dim,
            layers=config.predictor_layers,
        )

    def encode_content(self, frames: Tensor) -> EncoderFeatures:
        return self.enc_c(frames)

    def encode_motion(self, delta: Tensor) -> Tensor:
        if not self.variant.motion:
            raise RuntimeError(f"variant {self.variant.name!r} has no motion stream")
        return self.enc_m(delta)

    def _core(self, role: str, part: str) -> GaussianCore:
        name = f"{role}_{part}"
        core = getattr(self, name, None)
        if core is None:
            raise RuntimeError(f"variant {self.variant.name!r} has no {name} core")
        return core

    def posterior_step(self, part: str, feature: Tensor, state: RecurrentState):
        return self._core("posterior", part)(feature, state)

    def prior_step(self, part: str, feature_prev: Tensor, state: RecurrentState):
        return self._core("prior", part)(feature_prev, state)

    def assemble_latent(self, C: Tensor | None, M: Tensor | None, L: Tensor | None) -> TernaryLatent:
        v = self.variant
        d = self.config.latent_dim
        if v.content != (C is not None) or v.motion != (M is not None) or v.label != (L is not None):
            raise ValueError(
                f"latent parts do not match variant {v.name!r} "
                f"(got C={C is not None}, M={M is not None}, L={L is not None})"
            )
        for name, part, width in (("C", C, d), ("M", M, d), ("L", L, self.config.n_l)):
            if part is not None and part.shape[-1] != width:
                raise ValueError(f"{name} has width {part.shape[-1]}, expected {width}")
        if L is not None:
            ones = torch.isclose(L.sum(dim=-1), torch.ones_like(L.sum(dim=-1)))
            if not bool(ones.all()) or not bool(((L == 0) | (L == 1)).all()):
                raise ValueError("L must be one-hot rows")
        return TernaryLatent(C=C, M=M, L=L, mask=v)

    def predictor_step(self, h_prev: Tensor, z: TernaryLatent, state: RecurrentState):
        return self.predictor(torch.cat([h_prev, z.vector], dim=-1), state)

    def decode(self, g: Tensor, skips: tuple[Tensor, ...]) -> Tensor:
        return self.dec(g, skips)

    def init_states(self, batch: int, device=None, dtype=None) -> dict[str, RecurrentState]:
        states = {}
        for name in self.STATE_NAMES:
            core = getattr(self, name, None)
            if core is not None:
                states[name] = core.init_state(batch, device, dtype)
        return states


class CheckpointError(Exception):
    """Raised when a checkpoint file is missing or cannot be decoded."""


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".meta.json")


def save_checkpoint(
    path: Path,
    model: TPGModel,
    *,
    epoch: int,
    seed: int,
    data_fingerprint: str = "",
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Serialize weights plus a JSON metadata sidecar next to the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": asdict(model.config),
        "variant": model.variant.name,
        "epoch": epoch,
        "seed": seed,
        "data_fingerprint": data_fingerprint,
    }
    if extra:
        meta.update(extra)
    payload = {"model_state": model.state_dict(), "meta": meta}
    if optimizer_state is not None:
        payload["optimizer_state"] = optimizer_state
    torch.save(payload, path)
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=1)


class CheckpointBundle(NamedTuple):
    model: TPGModel
    meta: dict
    optimizer_state: dict | None


def load_checkpoint(path: Path, map_location="cpu") -> CheckpointBundle:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
        meta = payload["meta"]
        config = ModelConfig(**meta["config"])
        model = TPGModel(config, meta["variant"])
        model.load_state_dict(payload["model_state"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    return CheckpointBundle(model=model, meta=meta, optimizer_state=payload.get("optimizer_state"))
