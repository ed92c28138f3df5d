import importlib
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from rrc.denoise import (
    DEFAULT_SCHEDULE,
    DenoiseConfig,
    IterationTrace,
    adaptive_lambda,
    denoise,
    denoise_nnm,
    group_lambda,
    rank_residual_histogram,
    relative_change,
    shrink_stack,
    sigma_schedule,
)
from rrc.imageio import load_image
from rrc.metrics import psnr
from rrc.patches import GroupingParams, reference_stack

dn = importlib.import_module("rrc.denoise")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def lena_crop():
    return load_image(DATA / "lena256.png")[96:160, 96:160]


def _noisy(img, sigma, seed=0):
    return img + np.random.default_rng(seed).normal(0, sigma, img.shape)


class TestLambda:
    def test_examples(self):
        assert adaptive_lambda(0.0, 1.0, 1.0, 0.2) == pytest.approx(2 * math.sqrt(2) / 0.2, rel=1e-14)
        assert adaptive_lambda(0.0, 1.0, 1.0, 0.2) == pytest.approx(14.1421, abs=1e-4)
        assert adaptive_lambda(3.0, 0.0, 0.9, 0.2) == 0.0
        expected = 0.9 * 2.0 * 2.0**0.5 * 400.0 / 5.2
        assert adaptive_lambda(5.0, 20.0, 0.9, 0.2) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(195.815, abs=1e-3)

    def test_vectorised_and_guarded(self):
        out = adaptive_lambda(np.array([0.0, 1.8]), 1.0, 1.0, 0.2)
        np.testing.assert_allclose(out, [14.142135623730951, 1.4142135623730951])
        with pytest.raises(ValueError):
            adaptive_lambda(1.0, 1.0, 1.0, 0.0)

    def test_group_lambda_scales_by_group_size(self):
        lam = group_lambda(np.array([12.0]), np.array([0.0]), 2.0, 1.0, 0.2, 16)
        assert lam[0] == pytest.approx(adaptive_lambda(3.0, 2.0, 1.0, 0.2))


class TestSchedule:
    def test_examples(self):
        y = np.random.default_rng(0).uniform(0, 255, (8, 8))
        assert sigma_schedule(50, y, y, 0.8) == pytest.approx(40.0)
        assert sigma_schedule(30, y + 30, y, 0.8) == 0.0
        assert sigma_schedule(50, y + 30, y, 0.8) == pytest.approx(32.0)
        assert sigma_schedule(10, y + 30, y, 0.8) == 0.0
        with pytest.raises(ValueError):
            sigma_schedule(10, y, y[:4], 0.8)

    @pytest.mark.parametrize(
        "sigma,p,mu,rho,c,m,tau",
        [
            (10, 6, 0.1, 0.9, 0.9, 60, 0.001),
            (20, 6, 0.1, 0.9, 0.9, 60, 0.001),
            (25, 7, 0.1, 0.8, 0.9, 60, 0.001),
            (40, 7, 0.1, 0.8, 0.9, 70, 0.0006),
            (50, 7, 0.1, 0.8, 1.0, 80, 0.0006),
            (60, 8, 0.1, 0.8, 1.0, 90, 0.0005),
            (100, 9, 0.1, 0.8, 1.0, 100, 0.002),
        ],
    )
    def test_bands(self, sigma, p, mu, rho, c, m, tau):
        cfg = DEFAULT_SCHEDULE.config(sigma)
        assert cfg.grouping == GroupingParams(p, m, 25)
        assert (cfg.mu, cfg.rho, cfg.c, cfg.tau_stop, cfg.eps, cfg.h) == (mu, rho, c, tau, 0.2, 40.0)
        assert cfg.sigma_n == sigma

    def test_profile_override(self):
        cfg = DEFAULT_SCHEDULE.config(15, profile=100)
        assert cfg.sigma_n == 15 and cfg.grouping.patch_side == 9

    @pytest.mark.parametrize("sigma", [0, -1, 100.5])
    def test_out_of_range(self, sigma):
        with pytest.raises(ValueError):
            DEFAULT_SCHEDULE.config(sigma)

    def test_config_validation(self):
        base = DEFAULT_SCHEDULE.config(20)
        for bad in ({"mu": 1.5}, {"rho": 0}, {"c": 0}, {"eps": 0}, {"max_iters": 0}):
            with pytest.raises(ValueError):
                DEFAULT_SCHEDULE.config(20, **bad)
        assert base.max_iters == 30


def test_relative_change():
    a = np.ones((4, 4))
    assert relative_change(a, a) == 0.0
    assert relative_change(2 * a, a) == pytest.approx(1.0)
    assert relative_change(np.zeros(3), np.zeros(3)) == 0.0


class TestShrinkStack:
    def test_objective_not_worse_than_candidates(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            Y = rng.normal(100, 30, (1, 16, 10))
            R = reference_stack(Y[0] + rng.normal(0, 5, Y[0].shape), 40.0)[None]
            centre = R.mean(-1, keepdims=True)
            psi = np.linalg.svd(R - centre, compute_uv=False)[0]
            lam = float(rng.uniform(0.1, 50))
            out, _ = shrink_stack(Y, R, lambda d, s: np.full_like(d, lam))

            def obj(x):
                s = np.linalg.svd(x[0] - centre[0], compute_uv=False)
                return 0.5 * np.sum((Y - x) ** 2) + lam * np.sum(np.abs(s - psi))

            assert obj(out) <= obj(Y) + 1e-8
            assert obj(out) <= obj(R) + 1e-8

    def test_zero_lambda_is_identity(self):
        Y = np.random.default_rng(2).normal(0, 1, (3, 9, 5))
        out, _ = shrink_stack(Y, Y * 0.5, lambda d, s: np.zeros_like(d))
        np.testing.assert_allclose(out, Y, atol=1e-10)


class TestDenoise:
    def test_clean_input_is_fixed_point(self, lena_crop):
        cfg = replace(DEFAULT_SCHEDULE.config(5), sigma_n=0.0, max_iters=3)
        out, trace = denoise(lena_crop, cfg)
        assert psnr(out, lena_crop) > 60
        assert trace.sigma_t[0] == 0.0

    def test_denoises_and_traces(self, lena_crop):
        noisy = _noisy(lena_crop, 25)
        cfg = DEFAULT_SCHEDULE.config(25, max_iters=4)
        out, trace = denoise(noisy, cfg, clean=lena_crop)
        assert psnr(out, lena_crop) > psnr(np.clip(noisy, 0, 255), lena_crop) + 3
        assert 1 <= len(trace) <= 4
        assert trace.sigma_t[0] == pytest.approx(cfg.rho * 25)
        assert all(s <= cfg.rho * 25 + 1e-9 for s in trace.sigma_t)
        assert trace.psnr[-1] == pytest.approx(psnr(out, lena_crop))
        head = trace.to_csv().splitlines()[0]
        assert head == "iter,sigma_t,mean_lambda,rel_change,psnr_vs_clean"

    def test_sigma_decays_while_residual_grows(self, lena_crop):
        noisy = _noisy(lena_crop, 40, seed=3)
        cfg = DEFAULT_SCHEDULE.config(40, max_iters=5, tau_stop=1e-12)
        _, trace = denoise(noisy, cfg)
        s = trace.sigma_t
        assert len(s) == 5
        assert all(b <= a + 1e-9 for a, b in zip(s, s[1:]))

    def test_mu_zero_feeds_back_previous_estimate(self, lena_crop, monkeypatch):
        seen, estimates = [], []
        real_match, real_process = dn.match_all, dn.process_groups

        def spy_match(img, refs, params):
            seen.append(img.copy())
            return real_match(img, refs, params)

        def spy_process(*a, **k):
            acc, extra = real_process(*a, **k)
            estimates.append(acc.result())
            return acc, extra

        monkeypatch.setattr(dn, "match_all", spy_match)
        monkeypatch.setattr(dn, "process_groups", spy_process)
        cfg = DEFAULT_SCHEDULE.config(20, mu=0.0, max_iters=3, tau_stop=1e-12)
        denoise(_noisy(lena_crop, 20), cfg)
        assert len(seen) == 3
        assert np.array_equal(seen[1], estimates[0])
        assert np.array_equal(seen[2], estimates[1])

    def test_thread_count_does_not_change_output(self, lena_crop):
        noisy = _noisy(lena_crop, 30, seed=4)
        cfg = DEFAULT_SCHEDULE.config(30, max_iters=2)
        a, _ = denoise(noisy, cfg, threads=1)
        b, _ = denoise(noisy, cfg, threads=4)
        assert np.array_equal(a, b)

    def test_rejects_bad_input(self):
        cfg = DEFAULT_SCHEDULE.config(20)
        with pytest.raises(ValueError):
            denoise(np.zeros((8, 8, 3)), cfg)
        bad = np.zeros((32, 32))
        bad[3, 3] = np.nan
        with pytest.raises(ValueError):
            denoise(bad, cfg)

    def test_trace_csv_without_clean(self, tmp_path):
        t = IterationTrace()
        t.append(1, 2.0, 3.0, 0.5)
        p = tmp_path / "t.csv"
        t.write_csv(p)
        assert p.read_text() == "iter,sigma_t,mean_lambda,rel_change\n1,2.0,3.0,0.5\n"


class TestNnm:
    def test_zero_lambda_returns_input(self, lena_crop):
        noisy = _noisy(lena_crop, 10, seed=5)
        cfg = DEFAULT_SCHEDULE.config(10, max_iters=1)
        out = denoise_nnm(noisy, cfg, lam=0.0)
        np.testing.assert_allclose(out, np.clip(noisy, 0, 255), atol=1e-9)

    def test_rank_one_image(self):
        r = np.linspace(0.3, 1.0, 48)
        c = 0.5 + 0.5 * np.sin(np.linspace(0, 6, 48)) ** 2
        clean = 240 * np.outer(r, c)
        noisy = _noisy(clean, 10, seed=6)
        out = denoise_nnm(noisy, DEFAULT_SCHEDULE.config(10))
        assert psnr(out, clean) >= psnr(noisy, clean) + 3


class TestResidualHistogram:
    params = GroupingParams(7, 30, 15)

    def test_identical_inputs_spike(self, lena_crop):
        h = rank_residual_histogram(lena_crop, lena_crop, self.params, bins=11, reference="identity")
        assert h.counts.sum() == h.n_samples
        assert np.count_nonzero(h.counts) == 1
        assert h.edges[0] < 0 < h.edges[-1]
        assert h.excess_kurtosis == 0.0

    def test_nlm_reference_is_not_the_group(self, lena_crop):
        g = dn.rank_residuals(lena_crop, lena_crop, self.params)
        assert np.any(g != 0)
        with pytest.raises(ValueError):
            dn.rank_residuals(lena_crop, lena_crop, self.params, reference="mean")

    def test_noisy_natural_is_leptokurtic(self, lena_crop):
        h = rank_residual_histogram(lena_crop, _noisy(lena_crop, 20, seed=7), self.params)
        assert h.excess_kurtosis > 0

    def test_shuffled_image_is_wider(self, lena_crop):
        rng = np.random.default_rng(8)
        shuffled = rng.permutation(lena_crop.ravel()).reshape(lena_crop.shape)
        g_nat = dn.rank_residuals(lena_crop, _noisy(lena_crop, 20, seed=9), self.params)
        g_shuf = dn.rank_residuals(shuffled, _noisy(shuffled, 20, seed=9), self.params)
        assert np.std(g_shuf) > np.std(g_nat)
        iqr = lambda g: np.subtract(*np.percentile(g, [75, 25]))
        assert iqr(g_shuf) > iqr(g_nat)

    def test_csv_and_errors(self, lena_crop, tmp_path):
        h = rank_residual_histogram(lena_crop, lena_crop + 1, self.params, bins=5)
        text = h.to_csv()
        assert text.startswith("bin_lo,bin_hi,count\n")
        assert "excess_kurtosis" in text
        with pytest.raises(ValueError):
            rank_residual_histogram(lena_crop, lena_crop[:10], self.params)
        with pytest.raises(ValueError):
            rank_residual_histogram(lena_crop, lena_crop, self.params, bins=0)
