"""Command-line pipeline: synthgen, train, eval, predict, plot.

Every command takes a declarative config file; outputs land under the
config's out_dir (or the dataset root for synthgen). A lock file guards
each output directory against concurrent runs. Deterministic mode is on
unless TPGVAE_DETERMINISTIC=0.
"""

from __future__ import annotations

import contextlib
import functools
import hashlib
import json
import os
from pathlib import Path

import click
import numpy as np
import torch

from .config import ConfigError, load_config
from .data import (
    ClipStoreError,
    VideoClip,
    build_synthetic_dataset,
    load_dataset,
    one_hot_label,
    write_dataset,
)
from .data import store
from .data.jigsaws import ParseError
from .data.types import ClipManifest, ManifestEntry
from .metrics import (
    FeatureEmbedder,
    aggregate,
    best_of_k,
    compute_series,
    feature_cosine,
    psnr,
    read_table,
    ssim,
    write_series_csv,
    write_table,
)
from .model import CheckpointError, TPGModel, load_checkpoint
from .rollout import prior_mean_rollout, sampled_rollout
from .training import fit, make_optimizer

DETERMINISTIC_ENV = "TPGVAE_DETERMINISTIC"
LOCK_NAME = ".tpgvae.lock"
EVAL_TABLE = "eval_table.csv"
EVAL_CURVES = "eval_curves.csv"
EVAL_PER_CLIP = "eval_per_clip.csv"
EVAL_META = "eval_meta.json"


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "1") != "0"


def _setup_determinism(seed: int) -> None:
    if deterministic_mode():
        torch.manual_seed(int(seed))
        torch.set_num_threads(1)


@contextlib.contextmanager
def output_lock(directory: Path):
    """Single-writer guard: refuses to run while another command holds the dir."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise click.ClickException(
            f"output directory {directory} is locked by another run "
            f"(remove {lock} if that run is gone)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def friendly(fn):
    """Convert known failures into clean nonzero-exit CLI errors."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ConfigError, ClipStoreError, CheckpointError, ParseError, ValueError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc
        except KeyError as exc:
            raise click.ClickException(str(exc.args[0]) if exc.args else str(exc)) from exc

    return wrapper


@click.group()
def main():
    """Ternary-prior video prediction workflows."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML config file.")
@friendly
def synthgen(config_path):
    """Generate the synthetic dataset described by [data]."""
    cfg = load_config(config_path)
    _setup_determinism(cfg.data.seed)
    root = Path(cfg.data.root)
    with output_lock(root):
        clips = build_synthetic_dataset(
            cfg.data.clips_per_class,
            cfg.data.clip_length,
            cfg.data.seed,
            size=cfg.data.frame_size,
            channels=cfg.data.channels,
        )
        manifest = write_dataset(root, clips, cfg.data.test_fraction)
    n_train = len(manifest.split("train"))
    n_test = len(manifest.split("test"))
    click.echo(f"wrote {len(manifest.entries)} clips to {root} ({n_train} train, {n_test} test)")


def _load_split(manifest: ClipManifest, which: str) -> list[VideoClip]:
    return [store.load_clip(manifest, e.clip_id) for e in manifest.split(which)]


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--resume", "resume_path", type=click.Path(), default=None,
              help="Checkpoint to continue from; training restarts at its epoch + 1.")
@friendly
def train(config_path, resume_path):
    """Train the configured variant; writes checkpoints and a per-epoch log."""
    cfg = load_config(config_path)
    _setup_determinism(cfg.training.seed)
    manifest = load_dataset(Path(cfg.data.root))
    clips = _load_split(manifest, "train")
    if not clips:
        raise click.ClickException(f"dataset {cfg.data.root} has no training clips")

    start_epoch = 1
    if resume_path:
        bundle = load_checkpoint(resume_path)
        if bundle.meta["variant"] != cfg.variant:
            raise click.ClickException(
                f"checkpoint variant {bundle.meta['variant']!r} does not match "
                f"config variant {cfg.variant!r}"
            )
        model = bundle.model
        optimizer = make_optimizer(model, cfg.training)
        if bundle.optimizer_state is not None:
            optimizer.load_state_dict(bundle.optimizer_state)
        start_epoch = int(bundle.meta["epoch"]) + 1
        if start_epoch > cfg.training.epochs:
            raise click.ClickException(
                f"checkpoint is already at epoch {bundle.meta['epoch']}, "
                f"config trains only to {cfg.training.epochs}"
            )
    else:
        model = TPGModel(cfg.model, cfg.variant)
        optimizer = make_optimizer(model, cfg.training)

    out = Path(cfg.out_dir) / cfg.variant
    echo = lambda epoch, loss: click.echo(
        f"epoch {epoch:4d}  total {loss.total:.5f}  recon {loss.recon_l1:.5f}  "
        f"kl_c {loss.kl_content:.5f}  kl_m {loss.kl_motion:.5f}"
    )
    with output_lock(out):
        history = fit(
            model, clips, cfg.training, out,
            optimizer=optimizer, start_epoch=start_epoch, progress=echo,
        )
    click.echo(f"finished {cfg.training.epochs} epochs; log and checkpoints in {out}")
    return history


def _balanced_test_entries(manifest: ClipManifest, n_clips: int, n_l: int) -> list[ManifestEntry]:
    by_class: dict = {}
    for entry in manifest.split("test"):
        by_class.setdefault(entry.gesture, []).append(entry)
    quota, rem = divmod(n_clips, n_l)
    if rem:
        raise click.ClickException(f"eval.n_clips = {n_clips} is not divisible by {n_l} classes")
    chosen = []
    for gesture in sorted(by_class, key=lambda g: g.index):
        group = by_class[gesture]
        if len(group) < quota:
            raise click.ClickException(
                f"need {quota} test clips of class {gesture.token}, dataset has {len(group)}"
            )
        chosen.extend(sorted(group, key=lambda e: e.clip_id)[:quota])
    if len(by_class) < n_l:
        raise click.ClickException(
            f"test split covers {len(by_class)} classes, config expects {n_l}"
        )
    return chosen


@main.command(name="eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--checkpoints", "ckpt_dir", required=True, type=click.Path(),
              help="Directory holding <variant>/checkpoint_final.pt per variant.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Output directory (default: <out_dir>/eval).")
@friendly
def eval_cmd(config_path, ckpt_dir, out_path):
    """Evaluate checkpoints on the balanced test split; writes table + curves."""
    cfg = load_config(config_path)
    _setup_determinism(cfg.eval.seed)
    manifest = load_dataset(Path(cfg.data.root))
    entries = _balanced_test_entries(manifest, cfg.eval.n_clips, cfg.model.n_l)
    t_p, horizon = cfg.training.t_p, cfg.eval.horizon

    embedder = FeatureEmbedder(cfg.eval.embedder_seed)
    all_fns = {
        "psnr": psnr,
        "ssim": ssim,
        "feat_cosine": lambda a, b: feature_cosine(a, b, embedder),
    }
    metric_fns = {name: all_fns[name] for name in cfg.eval.metrics}

    ckpt_dir = Path(ckpt_dir)
    missing = [v for v in cfg.eval.variants if not (ckpt_dir / v / "checkpoint_final.pt").is_file()]
    if missing:
        raise click.ClickException(
            f"missing checkpoint_final.pt for variant(s): {', '.join(missing)} under {ckpt_dir}"
        )

    series = []
    for variant in cfg.eval.variants:
        bundle = load_checkpoint(ckpt_dir / variant / "checkpoint_final.pt")
        model = bundle.model
        model.eval()
        for ci, entry in enumerate(entries):
            clip = store.load_clip(manifest, entry.clip_id)
            if clip.length < t_p + horizon:
                raise click.ClickException(
                    f"clip {entry.clip_id!r} has {clip.length} frames, evaluation "
                    f"needs t_p + horizon = {t_p + horizon}"
                )
            observed = clip.frames[None, :t_p]
            truth = clip.frames[t_p : t_p + horizon]
            labels = one_hot_label(clip.gesture, cfg.model.n_l)[None]
            with torch.no_grad():
                if variant in cfg.eval.sampling_variants:
                    samples = sampled_rollout(
                        observed, labels, model, horizon, cfg.eval.k,
                        seed=cfg.eval.seed * 1_009 + ci,
                    )
                    for name, fn in metric_fns.items():
                        best = best_of_k(samples, truth, fn)
                        series += compute_series(
                            best.predicted[0], truth, entry.clip_id, variant, t_p + 1, {name: fn}
                        )
                else:
                    result = prior_mean_rollout(observed, labels, model, horizon)
                    series += compute_series(
                        result.predicted[0], truth, entry.clip_id, variant, t_p + 1, metric_fns
                    )
        click.echo(f"evaluated {variant} on {len(entries)} clips")

    table = aggregate(series)
    out = Path(out_path) if out_path else Path(cfg.out_dir) / "eval"
    with output_lock(out):
        write_table(table, out / EVAL_TABLE, t_filter=list(cfg.table_t))
        write_table(table, out / EVAL_CURVES)
        write_series_csv(series, out / EVAL_PER_CLIP)
        meta = {
            "t_p": t_p,
            "T": cfg.training.T,
            "horizon": horizon,
            "table_t": list(cfg.table_t),
            "variants": list(cfg.eval.variants),
            "metrics": list(cfg.eval.metrics),
            "k": cfg.eval.k,
            "n_clips": cfg.eval.n_clips,
        }
        with open(out / EVAL_META, "w") as fh:
            json.dump(meta, fh, indent=1)
    click.echo(f"wrote {EVAL_TABLE}, {EVAL_CURVES}, {EVAL_PER_CLIP} to {out}")


def _strip_image(truth: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Two rows (ground truth above, prediction below) with 2 px separators."""
    n, h, w, c = truth.shape
    pad = 2
    canvas = np.ones((2 * h + 3 * pad, n * (w + pad) + pad, c), dtype=np.float32)
    for i in range(n):
        x0 = pad + i * (w + pad)
        canvas[pad : pad + h, x0 : x0 + w] = truth[i]
        canvas[2 * pad + h : 2 * pad + 2 * h, x0 : x0 + w] = predicted[i]
    return (canvas * 255.0).round().astype(np.uint8)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--clip", "clip_id", required=True)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Output directory (default: <out_dir>/predictions).")
@friendly
def predict(config_path, checkpoint_path, clip_id, out_path):
    """Dump predicted frames and a ground-truth/prediction image strip."""
    from PIL import Image

    cfg = load_config(config_path)
    _setup_determinism(cfg.eval.seed)
    manifest = load_dataset(Path(cfg.data.root))
    clip = store.load_clip(manifest, clip_id)
    bundle = load_checkpoint(checkpoint_path)
    model = bundle.model
    model.eval()
    t_p, horizon = cfg.training.t_p, cfg.eval.horizon
    if clip.length < t_p + horizon:
        raise click.ClickException(
            f"clip {clip_id!r} has {clip.length} frames, need t_p + horizon = {t_p + horizon}"
        )
    observed = clip.frames[None, :t_p]
    truth = clip.frames[t_p : t_p + horizon]
    labels = one_hot_label(clip.gesture, cfg.model.n_l)[None]
    with torch.no_grad():
        result = prior_mean_rollout(observed, labels, model, horizon)
    predicted = result.predicted[0]

    out = Path(out_path) if out_path else Path(cfg.out_dir) / "predictions"
    with output_lock(out):
        store.write_clip(
            out / f"{clip_id}_pred.bin",
            VideoClip(frames=predicted, gesture=clip.gesture, clip_id=f"{clip_id}_pred"),
        )
        strip = _strip_image(truth.numpy(), predicted.numpy())
        Image.fromarray(strip.squeeze(-1) if strip.shape[-1] == 1 else strip).save(
            out / f"{clip_id}_strip.png"
        )
        record = {
            "clip_id": clip_id,
            "variant": bundle.meta["variant"],
            "mode": result.mode,
            "horizon": horizon,
            "checkpoint": str(checkpoint_path),
            "checkpoint_fingerprint": hashlib.sha256(
                Path(checkpoint_path).read_bytes()
            ).hexdigest()[:16],
            "seed": cfg.eval.seed,
        }
        with open(out / f"{clip_id}_pred.json", "w") as fh:
            json.dump(record, fh, indent=1)
    click.echo(f"wrote {clip_id}_pred.bin, {clip_id}_strip.png, {clip_id}_pred.json to {out}")


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(),
              help="Directory with eval_curves.csv (and eval_meta.json).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--t-marker", "t_marker", type=int, default=None,
              help="Training-horizon marker; default comes from eval_meta.json.")
@friendly
def plot(input_dir, out_dir, t_marker):
    """Render one per-horizon curve image per metric with a horizon marker."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    input_dir = Path(input_dir)
    table = read_table(input_dir / EVAL_CURVES)
    if t_marker is None:
        meta_path = input_dir / EVAL_META
        if meta_path.is_file():
            with open(meta_path) as fh:
                t_marker = json.load(fh).get("T")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = sorted({r.metric for r in table.rows})
    variants = sorted({r.variant for r in table.rows})
    written = []
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(6, 4))
        for variant in variants:
            rows = sorted(table.at(variant, metric), key=lambda r: r.t)
            ax.plot([r.t for r in rows], [r.mean for r in rows], marker="o",
                    markersize=3, label=variant)
        if t_marker is not None:
            ax.axvline(t_marker, linestyle=":", color="gray")
        ax.set_xlabel("t")
        ax.set_ylabel(metric)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out / f"{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path.name)
    click.echo(f"wrote {', '.join(written)} to {out}")


if __name__ == "__main__":
    main()
