"""Metric correctness against hand-rolled oracles, selection, aggregation."""

import math

import numpy as np
import pytest
import torch

from tpgvae.metrics import (
    AggregateRow,
    FeatureEmbedder,
    MetricSeries,
    PSNR_CAP_DB,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
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
from tpgvae.rollout import RolloutResult


def _pair(rng, size=16, channels=1):
    a = rng.random((size, size, channels))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0.0, 1.0)
    return a, b


def psnr_oracle(a, b):
    """Element-by-element reimplementation with explicit loops."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    mse = total / a.size
    if mse == 0.0:
        return 100.0
    return min(10.0 * math.log10(1.0 / mse), 100.0)


def ssim_oracle(a, b):
    """Windowed reference with explicit loops over valid positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    h, wd = a.shape
    values = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(wd - SSIM_WINDOW + 1):
            pa = a[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            pb = b[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            mu_a = float((w * pa).sum())
            mu_b = float((w * pb).sum())
            var_a = float((w * pa * pa).sum()) - mu_a**2
            var_b = float((w * pb * pb).sum()) - mu_b**2
            cov = float((w * pa * pb).sum()) - mu_a * mu_b
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


class TestPSNR:
    def test_identical_hits_cap(self):
        a = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(a, a) == PSNR_CAP_DB

    def test_tiny_error_is_capped(self):
        a = np.zeros((8, 8, 1))
        b = np.full_like(a, 1e-9)
        assert psnr(a, b) == PSNR_CAP_DB

    def test_mse_hundredth_is_twenty_db(self):
        a = np.zeros((8, 8, 1))
        b = np.full_like(a, 0.1)
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = _pair(rng)
            assert abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = _pair(rng)
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise_amplitude(self):
        rng = np.random.default_rng(3)
        a = rng.random((16, 16, 1)) * 0.5 + 0.25
        noise = rng.normal(size=a.shape)
        values = [psnr(a, np.clip(a + amp * noise, 0, 1)) for amp in (0.02, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_accepts_torch_tensors(self):
        a = torch.rand(8, 8, 3)
        assert psnr(a, a.clone()) == PSNR_CAP_DB

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            psnr(np.zeros((8, 8, 1)), np.zeros((8, 9, 1)))


class TestSSIM:
    def test_identical_is_one(self):
        a = np.random.default_rng(4).random((16, 16, 1))
        assert abs(ssim(a, a) - 1.0) < 1e-12

    def test_constant_frames(self):
        # zero variance everywhere, so only the luminance term survives
        a = np.zeros((16, 16, 1))
        b = np.ones((16, 16, 1))
        expected = SSIM_K1**2 / (1.0 + SSIM_K1**2)
        got = ssim(a, b)
        assert abs(got - expected) < 1e-12
        assert abs(got - 1e-4) < 1e-6

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = _pair(rng)
            assert abs(ssim(a, b) - ssim_oracle(a[..., 0], b[..., 0])) < 1e-7

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a, b = _pair(rng)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_rgb_reduces_to_grayscale(self):
        rng = np.random.default_rng(7)
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        gray = np.array([0.299, 0.587, 0.114])
        assert abs(ssim(a, b) - ssim(a @ gray, b @ gray)) < 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            a = rng.random((16, 16, 1))
            b = rng.random((16, 16, 1))
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_frame_smaller_than_window(self):
        with pytest.raises(ValueError, match="smaller than"):
            ssim(np.zeros((8, 8, 1)), np.zeros((8, 8, 1)))


class TestFeatureCosine:
    def test_same_frame_is_one(self):
        emb = FeatureEmbedder(seed=0)
        a = np.random.default_rng(9).random((16, 16, 1))
        assert abs(feature_cosine(a, a, emb) - 1.0) < 1e-12

    def test_embedder_is_seed_deterministic(self):
        a = np.random.default_rng(10).random((16, 16, 1))
        e1, e2 = FeatureEmbedder(seed=3), FeatureEmbedder(seed=3)
        assert np.array_equal(e1(a), e2(a))
        assert not np.array_equal(e1(a), FeatureEmbedder(seed=4)(a))

    def test_orthogonal_embeddings(self):
        table = {0.0: np.array([1.0, 0.0]), 1.0: np.array([0.0, 2.0])}
        stub = lambda frame: table[float(np.ravel(frame)[0])]
        assert abs(feature_cosine(np.zeros((2, 2)), np.ones((2, 2)), stub)) < 1e-12

    def test_zero_norm_handling(self):
        zero = lambda frame: np.zeros(4)
        flat = lambda frame: np.ravel(frame)[:4]
        # both embeddings zero: call them perfectly similar
        assert feature_cosine(np.ones((2, 2)), np.ones((2, 2)), zero) == 1.0
        # exactly one zero: no direction to compare against
        assert feature_cosine(np.zeros((2, 2)), np.ones((2, 2)), flat) == 0.0

    def test_bounded(self):
        emb = FeatureEmbedder(seed=0)
        rng = np.random.default_rng(11)
        for _ in range(5):
            v = feature_cosine(rng.random((16, 16, 1)), rng.random((16, 16, 1)), emb)
            assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12


def _as_result(frames):
    return RolloutResult(
        predicted=torch.as_tensor(frames, dtype=torch.float32),
        reconstructions=None,
        per_step_latents=None,
        mode="sampled",
    )


class TestBestOfK:
    def test_exact_sample_wins(self):
        rng = np.random.default_rng(12)
        truth = rng.random((3, 8, 8, 1))
        far = _as_result(np.clip(truth + 0.3, 0, 1))
        exact = _as_result(truth)
        mid = _as_result(np.clip(truth + 0.05, 0, 1))
        assert best_of_k([far, exact, mid], truth, psnr) is exact

    def test_hand_enumerated_argmax(self):
        truth = np.zeros((2, 8, 8, 1))
        offsets = [0.3, 0.1, 0.2]
        samples = [_as_result(np.full_like(truth, o)) for o in offsets]
        scores = [
            np.mean([psnr(np.full((8, 8, 1), o), truth[t]) for t in range(2)])
            for o in offsets
        ]
        assert best_of_k(samples, truth, psnr) is samples[int(np.argmax(scores))]

    def test_tie_takes_lowest_index(self):
        truth = np.zeros((2, 8, 8, 1))
        a = _as_result(np.full_like(truth, 0.2))
        b = _as_result(np.full_like(truth, 0.2))
        assert best_of_k([a, b], truth, psnr) is a

    def test_single_sample(self):
        truth = np.zeros((2, 8, 8, 1))
        only = _as_result(np.full_like(truth, 0.5))
        assert best_of_k([only], truth, psnr) is only

    def test_batched_single_clip_accepted(self):
        truth = np.zeros((2, 8, 8, 1))
        batched = _as_result(np.zeros((1, 2, 8, 8, 1)))
        assert best_of_k([batched], truth, psnr) is batched
        multi = _as_result(np.zeros((2, 2, 8, 8, 1)))
        with pytest.raises(ValueError, match="single-clip"):
            best_of_k([multi], truth, psnr)

    def test_errors(self):
        truth = np.zeros((2, 8, 8, 1))
        with pytest.raises(ValueError, match="at least one"):
            best_of_k([], truth, psnr)
        short = _as_result(np.zeros((1, 8, 8, 1)))
        with pytest.raises(ValueError, match="frames, truth has"):
            best_of_k([short], truth, psnr)


class TestComputeSeries:
    def test_values_and_metadata(self):
        truth = np.zeros((2, 16, 16, 1))
        pred = np.stack([np.zeros((16, 16, 1)), np.full((16, 16, 1), 0.1)])
        series = compute_series(pred, truth, "clip_a", "tpg_vae", 6, {"psnr": psnr})
        (s,) = series
        assert (s.metric, s.clip_id, s.variant, s.t_start) == ("psnr", "clip_a", "tpg_vae", 6)
        assert s.per_step.shape == (2,)
        assert s.per_step[0] == PSNR_CAP_DB
        assert abs(s.per_step[1] - 20.0) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            compute_series(np.zeros((2, 8, 8, 1)), np.zeros((3, 8, 8, 1)), "c", "v", 6, {})


def _series(variant, clip_id, values, metric="psnr", t_start=6):
    return MetricSeries(metric, np.asarray(values, dtype=np.float64), clip_id, variant, t_start)


class TestAggregate:
    def test_two_values_mean_and_population_std(self):
        table = aggregate([_series("v", "a", [10.0]), _series("v", "b", [20.0])])
        (row,) = table.rows
        assert (row.mean, row.std, row.t) == (15.0, 5.0, 6)

    def test_single_clip_zero_std(self):
        table = aggregate([_series("v", "a", [3.0, 4.0])])
        assert [r.std for r in table.rows] == [0.0, 0.0]
        assert [r.t for r in table.rows] == [6, 7]

    def test_matches_numpy_oracle(self):
        rng = np.random.default_rng(13)
        data = {v: rng.random((3, 4)) for v in ("v1", "v2")}
        series = [
            _series(v, f"clip{i}", data[v][i])
            for v in data
            for i in range(3)
        ]
        table = aggregate(series)
        for v, block in data.items():
            rows = table.at(v, "psnr")
            for step, row in enumerate(rows):
                assert abs(row.mean - block[:, step].mean()) < 1e-12
                assert abs(row.std - block[:, step].std(ddof=0)) < 1e-12

    def test_order_invariance(self):
        rng = np.random.default_rng(14)
        series = [_series("v", f"c{i}", rng.random(3)) for i in range(4)]
        shuffled = [series[2], series[0], series[3], series[1]]
        assert aggregate(series).rows == aggregate(shuffled).rows

    def test_mismatched_clip_sets_rejected(self):
        series = [
            _series("v1", "a", [1.0]),
            _series("v2", "b", [1.0]),
        ]
        with pytest.raises(ValueError, match="different clip sets"):
            aggregate(series)

    def test_horizon_mismatch_rejected(self):
        series = [
            _series("v", "a", [1.0, 2.0]),
            _series("v", "b", [1.0]),
        ]
        with pytest.raises(ValueError, match="horizon or t_start"):
            aggregate(series)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no series"):
            aggregate([])


class TestTables:
    def test_roundtrip_and_header(self, tmp_path):
        rng = np.random.default_rng(15)
        table = aggregate(
            [_series(v, c, rng.random(3) * 40) for v in ("v1", "v2") for c in ("a", "b")]
        )
        path = tmp_path / "table.csv"
        write_table(table, path)
        first = path.read_text().splitlines()[0]
        assert first == "variant,metric,t,mean,std"
        back = read_table(path)
        assert len(back.rows) == len(table.rows)
        for got, want in zip(back.rows, table.rows):
            assert (got.variant, got.metric, got.t) == (want.variant, want.metric, want.t)
            assert abs(got.mean - want.mean) < 1e-8
            assert abs(got.std - want.std) < 1e-8

    def test_t_filter(self, tmp_path):
        table = aggregate([_series("v", "a", [1.0, 2.0, 3.0])])
        path = tmp_path / "t.csv"
        write_table(table, path, t_filter=[7])
        back = read_table(path)
        assert [r.t for r in back.rows] == [7]

    def test_malformed_and_empty(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n")
        with pytest.raises(ValueError, match="header"):
            read_table(bad)
        empty = tmp_path / "empty.csv"
        empty.write_text("variant,metric,t,mean,std\n")
        with pytest.raises(ValueError, match="no data rows"):
            read_table(empty)

    def test_series_dump(self, tmp_path):
        path = tmp_path / "per_clip.csv"
        write_series_csv([_series("v", "a", [1.5, 2.5])], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "variant,metric,clip_id,t,value"
        assert lines[1] == "v,psnr,a,6,1.5"
        assert lines[2] == "v,psnr,a,7,2.5"
