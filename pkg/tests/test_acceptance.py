"""End-to-end acceptance checks.

Each test is one go/no-go criterion with its tolerance stated inline; the
terminal summary (see conftest) prints one PASS/FAIL line per criterion.
The training smoke shares one session fixture between the improvement and
long-horizon checks, so the expensive run happens once.
"""

import copy
import csv
import math
import time

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from tpgvae.cli import EVAL_META, EVAL_TABLE, main
from tpgvae.data import build_synthetic_dataset, one_hot_label, store
from tpgvae.metrics import psnr, read_table, ssim
from tpgvae.model import LatentGaussian, ModelConfig, TPGModel, load_checkpoint
from tpgvae.objective import TrainingConfig, gaussian_noise, kl_diag_gaussian, reparameterize
from tpgvae.rollout import prior_mean_rollout, teacher_forced_pass
from tpgvae.training import fit, sequence_loss

TINY = ModelConfig(
    frame_size=8,
    latent_dim=2,
    recurrent_width=16,
    content_feature_dim=12,
    motion_feature_dim=12,
    predictor_feature_dim=12,
    channels=1,
)

SMOKE_SEED = 0


def _tiny_batch(T, B=2, seed=0, size=8):
    clips = [
        build_synthetic_dataset(1, T, seed + i, size=size, channels=1)[i % 4]
        for i in range(B)
    ]
    frames = torch.stack([c.frames for c in clips])
    labels = torch.stack([one_hot_label(c.gesture, 4) for c in clips])
    return frames, labels


class _ReplayNoise:
    """Fixed noise tape so repeated loss evaluations see identical draws."""

    def __init__(self, seed):
        self._draw = gaussian_noise(seed)
        self.tape = []
        self.i = 0

    def __call__(self, like):
        if self.i == len(self.tape):
            self.tape.append(self._draw(like))
        value = self.tape[self.i]
        self.i += 1
        return value.to(like.dtype)

    def reset(self):
        self.i = 0


def test_kl_closed_form_matches_monte_carlo():
    """Closed-form KL vs 1e6-sample MC, 50 random 16-dim pairs, rel err < 1e-2."""
    tic = time.perf_counter()
    rng = np.random.default_rng(20260814)
    n, dim = 1_000_000, 16
    worst = 0.0
    for _ in range(50):
        mu_q, lv_q = rng.normal(size=dim), rng.uniform(-1.0, 1.0, size=dim)
        mu_p, lv_p = rng.normal(size=dim), rng.uniform(-1.0, 1.0, size=dim)
        closed = float(
            kl_diag_gaussian(
                LatentGaussian(torch.tensor(mu_q), torch.tensor(lv_q)),
                LatentGaussian(torch.tensor(mu_p), torch.tensor(lv_p)),
            )
        )
        x = mu_q + np.exp(0.5 * lv_q) * rng.standard_normal((n, dim))
        log_q = -0.5 * (lv_q + (x - mu_q) ** 2 / np.exp(lv_q)).sum(axis=1)
        log_p = -0.5 * (lv_p + (x - mu_p) ** 2 / np.exp(lv_p)).sum(axis=1)
        mc = float((log_q - log_p).mean())
        worst = max(worst, abs(closed - mc) / abs(closed))
    elapsed = time.perf_counter() - tic
    assert worst < 1e-2, f"max relative error {worst:.2e}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s, budget 60s"


def test_gradients_match_finite_differences():
    """Autograd vs central differences (step 1e-5, float64), rel err < 1e-4."""
    tic = time.perf_counter()
    step = 1e-5

    # reparameterize: both parameter paths, random configurations
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(30):
        dim = int(rng.integers(1, 6))
        mean = torch.tensor(rng.normal(size=dim), requires_grad=True)
        log_var = torch.tensor(rng.normal(size=dim), requires_grad=True)
        noise = torch.tensor(rng.normal(size=dim))
        weights = torch.tensor(rng.normal(size=dim))
        (reparameterize(LatentGaussian(mean, log_var), noise) * weights).sum().backward()

        def scalar(m, lv):
            return float((reparameterize(LatentGaussian(m, lv), noise) * weights).sum())

        base_m, base_lv = mean.detach(), log_var.detach()
        for j in range(dim):
            for tensor, grad, fn in (
                (base_m, mean.grad, lambda v: scalar(v, base_lv)),
                (base_lv, log_var.grad, lambda v: scalar(base_m, v)),
            ):
                plus, minus = tensor.clone(), tensor.clone()
                plus[j] += step
                minus[j] -= step
                fd = (fn(plus) - fn(minus)) / (2 * step)
                an = float(grad[j])
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    assert worst < 1e-4, f"reparameterize: max relative error {worst:.2e}"

    # sequence_loss through the full tiny model, sampled parameter coordinates
    torch.manual_seed(2)
    model = TPGModel(TINY, "tpg_vae").double()
    frames, labels = _tiny_batch(T=5)
    clips = _clips_from(frames.double(), labels)
    cfg = TrainingConfig(T=5, t_p=2, batch_size=2)
    noise = _ReplayNoise(3)

    def evaluate():
        noise.reset()
        return sequence_loss(clips, model, cfg, noise).total

    model.zero_grad()
    evaluate().backward()
    params = [(name, p) for name, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in params])
    bounds = np.cumsum(sizes)
    picks = np.random.default_rng(4).choice(int(bounds[-1]), size=48, replace=False)

    worst = 0.0
    for flat in sorted(picks):
        pi = int(np.searchsorted(bounds, flat, side="right"))
        local = int(flat - (bounds[pi - 1] if pi else 0))
        _, p = params[pi]
        an = float(p.grad.view(-1)[local])
        with torch.no_grad():
            p.view(-1)[local] += step
            f_plus = float(evaluate().detach())
            p.view(-1)[local] -= 2 * step
            f_minus = float(evaluate().detach())
            p.view(-1)[local] += step
        fd = (f_plus - f_minus) / (2 * step)
        # the 1e-5 floor keeps gradients below the finite-difference noise
        # floor (~1e-10 absolute) from registering as spurious relative error
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-5))
    elapsed = time.perf_counter() - tic
    assert worst < 1e-4, f"sequence_loss: max relative error {worst:.2e}"
    assert elapsed < 300.0, f"took {elapsed:.1f}s, budget 300s"


def _clips_from(frames, labels):
    from tpgvae.data import Gesture, VideoClip

    clips = []
    for i in range(frames.shape[0]):
        gesture = Gesture.from_index(int(labels[i].argmax()))
        clips.append(VideoClip(frames=frames[i], gesture=gesture, clip_id=f"fd_{i}"))
    return clips


def test_metric_reference_implementations():
    """psnr/ssim vs loop oracles on 100 pairs: 1e-9 / 1e-4; exact sentinels."""
    rng = np.random.default_rng(5)

    def psnr_oracle(a, b):
        total = 0.0
        for x, y in zip(a.ravel(), b.ravel()):
            total += (x - y) ** 2
        mse = total / a.size
        return 100.0 if mse == 0.0 else min(10.0 * math.log10(1.0 / mse), 100.0)

    def ssim_oracle(a, b):
        half = 5.0
        x = np.arange(11) - half
        g = np.exp(-(x * x) / (2.0 * 1.5**2))
        w = np.outer(g, g)
        w /= w.sum()
        c1, c2 = 0.01**2, 0.03**2
        vals = []
        for i in range(a.shape[0] - 10):
            for j in range(a.shape[1] - 10):
                pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
                mu_a, mu_b = (w * pa).sum(), (w * pb).sum()
                va = (w * pa * pa).sum() - mu_a**2
                vb = (w * pb * pb).sum() - mu_b**2
                cov = (w * pa * pb).sum() - mu_a * mu_b
                vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
                )
        return float(np.mean(vals))

    worst_psnr, worst_ssim = 0.0, 0.0
    for i in range(100):
        size = 16 if i % 2 else 20
        a = rng.random((size, size))
        b = np.clip(a + rng.normal(scale=rng.uniform(0.01, 0.3), size=a.shape), 0, 1)
        worst_psnr = max(worst_psnr, abs(psnr(a, b) - psnr_oracle(a, b)))
        worst_ssim = max(worst_ssim, abs(ssim(a, b) - ssim_oracle(a, b)))
    assert worst_psnr < 1e-9, f"psnr deviates by {worst_psnr:.2e}"
    assert worst_ssim < 1e-4, f"ssim deviates by {worst_ssim:.2e}"

    a = rng.random((16, 16))
    assert ssim(a, a) == 1.0
    assert abs(psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) - 20.0) < 1e-9


def _pipeline_config(root, runs, variant="tpg_vae", epochs=2, horizon=4, clip_length=8,
                     T=6, table_t="table_t = [4, 6]"):
    return f"""
variant = "{variant}"
out_dir = "{runs}"

[data]
root = "{root}"
clips_per_class = 3
clip_length = {clip_length}
seed = 1
channels = 1
frame_size = 16
test_fraction = 0.2

[model]
latent_dim = 2
recurrent_width = 16
content_feature_dim = 12
motion_feature_dim = 12
predictor_feature_dim = 12

[training]
T = {T}
t_p = 2
epochs = {epochs}
batch_size = 4
learning_rate = 1e-3
seed = 0

[eval]
horizon = {horizon}
k = 2
n_clips = 4
seed = 0
variants = ["tpg_vae", "ml_vae", "cl_vae", "cm_vae", "m_vae", "svg_lp_star"]
{table_t}
"""


def _read_log_without_walltime(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-1] == "wall_time_s"
    return [row[:-1] for row in rows]


def test_seeded_reruns_are_reproducible(tmp_path):
    """Bitwise-equal rollouts from one checkpoint; rerun reproduces the log."""
    runner = CliRunner()
    logs = []
    for tag in ("a", "b"):
        ws = tmp_path / tag
        cfg = ws / "config.toml"
        ws.mkdir()
        cfg.write_text(_pipeline_config((ws / "data").as_posix(), (ws / "runs").as_posix()))
        for args in (["synthgen", "--config", str(cfg)], ["train", "--config", str(cfg)]):
            result = runner.invoke(main, args)
            assert result.exit_code == 0, result.output
        logs.append(_read_log_without_walltime(ws / "runs" / "tpg_vae" / "training_log.csv"))
    # wall time is the one physically nondeterministic column; all loss
    # columns must reproduce digit for digit
    assert logs[0] == logs[1]

    ckpt = tmp_path / "a" / "runs" / "tpg_vae" / "checkpoint_final.pt"
    frames, labels = _tiny_batch(T=6, size=16)
    runs = []
    for _ in range(2):
        model = load_checkpoint(ckpt).model.eval()
        with torch.no_grad():
            runs.append(prior_mean_rollout(frames, labels, model, horizon=5).predicted)
    assert torch.equal(runs[0], runs[1])


def test_label_masking_and_sensitivity():
    """Masked label is bitwise inert; an active label changes pixels > 1e-8."""
    frames, labels = _tiny_batch(T=5)
    rolled = torch.roll(labels, shifts=1, dims=1)
    for name in ("cm_vae", "m_vae", "svg_lp_star"):
        torch.manual_seed(6)
        model = TPGModel(TINY, name).eval()
        with torch.no_grad():
            a = prior_mean_rollout(frames, labels, model, horizon=3).predicted
            b = prior_mean_rollout(frames, rolled, model, horizon=3).predicted
            c = prior_mean_rollout(frames, None, model, horizon=3).predicted
        assert torch.equal(a, b) and torch.equal(a, c), name
        tf_a = teacher_forced_pass(frames, labels, model, gaussian_noise(1), t_p=2)
        tf_b = teacher_forced_pass(frames, rolled, model, gaussian_noise(1), t_p=2)
        assert torch.equal(tf_a.predicted, tf_b.predicted), name
    for name in ("tpg_vae", "ml_vae", "cl_vae"):
        torch.manual_seed(7)
        model = TPGModel(TINY, name).eval()
        with torch.no_grad():
            a = prior_mean_rollout(frames, labels, model, horizon=3).predicted
            b = prior_mean_rollout(frames, rolled, model, horizon=3).predicted
        assert float((a - b).abs().max()) > 1e-8, name


@pytest.fixture(scope="session")
def smoke(tmp_path_factory):
    """Scaled training run: 200 clips, t_p 5, T 10, latent 16, 20 epochs."""
    tic = time.perf_counter()
    ws = tmp_path_factory.mktemp("smoke")
    clips = build_synthetic_dataset(50, 15, SMOKE_SEED, size=64, channels=3)
    manifest = store.write_dataset(ws / "data", clips, test_fraction=0.2)
    del clips
    train_clips = [store.load_clip(manifest, e.clip_id) for e in manifest.split("train")]
    test_clips = [store.load_clip(manifest, e.clip_id) for e in manifest.split("test")]

    torch.manual_seed(SMOKE_SEED)
    torch.set_num_threads(1)
    model = TPGModel(ModelConfig(), "tpg_vae")
    untrained = copy.deepcopy(model)
    config = TrainingConfig(
        T=10, t_p=5, epochs=20, batch_size=8, learning_rate=1e-3, seed=SMOKE_SEED
    )
    history = fit(model, train_clips, config, ws / "run", checkpoint_every=0)
    model.eval()
    untrained.eval()

    trained_psnr = _per_step_psnr(model, test_clips, t_p=5, horizon=10)
    untrained_psnr = _per_step_psnr(untrained, test_clips, t_p=5, horizon=5)
    return {
        "history": history,
        "trained_psnr": trained_psnr,
        "untrained_psnr": untrained_psnr,
        "n_test": len(test_clips),
        "elapsed": time.perf_counter() - tic,
    }


def _per_step_psnr(model, clips, t_p, horizon):
    sums = np.zeros(horizon)
    for clip in clips:
        observed = clip.frames[None, :t_p]
        truth = clip.frames[t_p : t_p + horizon]
        labels = one_hot_label(clip.gesture, model.config.n_l)[None]
        with torch.no_grad():
            predicted = prior_mean_rollout(observed, labels, model, horizon).predicted[0]
        for t in range(horizon):
            sums[t] += psnr(predicted[t], truth[t])
    return sums / len(clips)


def test_training_smoke_improves_over_init(smoke):
    """20 epochs halve the loss; trained beats init by >= 3 dB at every step."""
    history = smoke["history"]
    assert len(history) == 20
    first, last = history[0].total, history[-1].total
    assert last < 0.5 * first, f"epoch-20 {last:.4f} vs epoch-1 {first:.4f}"

    assert smoke["n_test"] == 40
    margins = smoke["trained_psnr"][:5] - smoke["untrained_psnr"]
    assert (margins >= 3.0).all(), f"per-step dB margins {np.round(margins, 2)}"
    assert smoke["elapsed"] < 45 * 60, f"took {smoke['elapsed']:.0f}s, budget 2700s"


def test_variant_table_and_plots(tmp_path):
    """Six variants produce the mean/std table rows and three curve images."""
    runner = CliRunner()
    root = (tmp_path / "data").as_posix()
    runs = (tmp_path / "runs").as_posix()
    variants = ["tpg_vae", "ml_vae", "cl_vae", "cm_vae", "m_vae", "svg_lp_star"]

    def cfg_for(variant):
        path = tmp_path / f"{variant}.toml"
        path.write_text(
            _pipeline_config(root, runs, variant=variant, epochs=1,
                             horizon=20, clip_length=22, T=4, table_t="")
        )
        return str(path)

    first = cfg_for(variants[0])
    assert runner.invoke(main, ["synthgen", "--config", first]).exit_code == 0
    for variant in variants:
        result = runner.invoke(main, ["train", "--config", cfg_for(variant)])
        assert result.exit_code == 0, result.output

    out = tmp_path / "eval"
    result = runner.invoke(
        main, ["eval", "--config", first, "--checkpoints", runs, "--out", str(out)]
    )
    assert result.exit_code == 0, result.output

    table = read_table(out / EVAL_TABLE)
    assert sorted({r.t for r in table.rows}) == [7, 12, 17, 22]  # t_p + {5,10,15,20}
    assert sorted({r.variant for r in table.rows}) == sorted(variants)
    assert sorted({r.metric for r in table.rows}) == ["feat_cosine", "psnr", "ssim"]
    assert len(table.rows) == 6 * 3 * 4
    assert all(np.isfinite(r.mean) and np.isfinite(r.std) for r in table.rows)
    assert (out / EVAL_META).is_file()

    plots = tmp_path / "plots"
    result = runner.invoke(main, ["plot", "--input", str(out), "--out", str(plots)])
    assert result.exit_code == 0, result.output
    for name in ("psnr.png", "ssim.png", "feat_cosine.png"):
        assert (plots / name).stat().st_size > 0, name


def test_long_horizon_degrades_gracefully(smoke):
    """2x-window rollout completes; window-3 smoothed PSNR is nonincreasing."""
    curve = smoke["trained_psnr"]  # horizon 10 = twice the 5-step window
    assert curve.shape == (10,)
    assert np.isfinite(curve).all()
    smoothed = np.convolve(curve, np.ones(3) / 3.0, mode="valid")
    diffs = np.diff(smoothed)
    assert (diffs <= 1e-9).all(), f"smoothed curve rises: {np.round(smoothed, 3)}"
