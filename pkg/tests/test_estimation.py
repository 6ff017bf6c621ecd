import numpy as np
import pytest
import scipy.linalg

from cfura.denoiser import EffectiveNoise, PriorParams
from cfura.detection import DetectionReport
from cfura.estimation import (InsufficientSamplesError, conditional_error_stats,
                              genie_asymptotic_fixed_point, genie_mmse_estimate,
                              theory_conditional_moments)
from cfura.model import (SystemConfig, build_wyner_geometry, make_priors,
                         sample_scene)
from cfura.rng import StreamFactory


def scene_for(seed=0, L=256, lam=(0.3, 0.3), snr=10.0):
    geo = build_wyner_geometry(0.5)
    cfg = SystemConfig(L=L, U=2, B=2, M=2, alpha=np.array([2.0, 2.0]),
                       lam=np.array(lam), snr=snr, T=2, seed=seed)
    streams = StreamFactory(seed).trial_generators(
        1, names=("codebook", "activity", "channel", "noise"))[0]
    return cfg, geo, sample_scene(cfg, geo, streams)


class TestGenieEstimator:
    def test_identity_48_equals_49_with_independent_mu(self):
        # Eq.-48-style direct MSE versus the Sherman-Morrison form with mu
        # recomputed from an explicitly deflated inverse
        cfg, geo, scene = scene_for(seed=1, L=128)
        out = genie_mmse_estimate(scene, dual=False)
        sw2 = cfg.sigma_w2
        for u in range(2):
            idx = out.active_index[u]
            if idx.size == 0:
                continue
            for b in range(cfg.B):
                k_b = sw2 * np.eye(cfg.L, dtype=complex)
                for u2 in range(2):
                    cols = scene.codebooks[u2][:, out.active_index[u2]]
                    k_b += geo.g[u2, b] * (cols @ cols.conj().T)
                for j, n in enumerate(idx[:4]):
                    s = scene.codebooks[u][:, n]
                    g = geo.g[u, b]
                    deflated = k_b - g * np.outer(s, s.conj())
                    mu_indep = (s.conj() @ np.linalg.solve(deflated, s)).real
                    assert out.mse_direct[u][j, b] == pytest.approx(
                        g / (1.0 + g * mu_indep), rel=1e-10)

    def test_primal_dual_paths_agree(self):
        cfg, geo, scene = scene_for(seed=2, L=128)
        a = genie_mmse_estimate(scene, dual=False)
        b = genie_mmse_estimate(scene, dual=True)
        for u in range(2):
            assert np.allclose(a.estimates[u], b.estimates[u], rtol=1e-9)
            assert np.allclose(a.mu[u], b.mu[u], rtol=1e-8)

    def test_sherman_morrison_arithmetic(self):
        # g = 1, mu = 10 -> per-coefficient MSE 1/11
        assert 1.0 / (1.0 + 1.0 * 10.0) == pytest.approx(1.0 / 11.0)

    def test_single_active_codeword_shrinkage(self):
        # rank-one reduction: estimate ~ g/(g + sw2) s^H y per antenna
        geo = build_wyner_geometry(0.0)
        cfg = SystemConfig(L=2048, U=2, B=2, M=1, alpha=np.array([0.01, 0.01]),
                           lam=np.array([0.999, 0.001]), snr=100.0, T=2, seed=3)
        streams = StreamFactory(3).trial_generators(
            1, names=("codebook", "activity", "channel", "noise"))[0]
        scene = sample_scene(cfg, geo, streams)
        # keep exactly one active codeword overall
        scene.activity[0][:] = 0
        scene.activity[0][0] = 1
        scene.activity[1][:] = 0
        scene.channels[0][1:] = 0
        scene.channels[1][:] = 0
        y = scene.noise.copy() + scene.codebooks[0] @ scene.channels[0]
        scene.observation = y
        out = genie_mmse_estimate(scene)
        s = scene.codebooks[0][:, 0]
        g = geo.g[0, 0]
        expect = g / (cfg.sigma_w2 + g * np.linalg.norm(s) ** 2) * (
            s.conj() @ y[:, 0])
        assert out.estimates[0][0, 0] == pytest.approx(expect, rel=1e-9)

    def test_no_active_messages(self):
        cfg, geo, scene = scene_for(seed=4, L=64, lam=(0.3, 0.3))
        for u in range(2):
            scene.activity[u][:] = 0
        out = genie_mmse_estimate(scene)
        assert all(e.shape[0] == 0 for e in out.estimates)

    def test_mu_concentration_moderate(self):
        cfg, geo, scene = scene_for(seed=5, L=1024, lam=(0.05, 0.05))
        out = genie_mmse_estimate(scene)
        alpha_eff = cfg.n_codewords / cfg.L
        for b in range(cfg.B):
            c_star = genie_asymptotic_fixed_point(geo, cfg.lam, alpha_eff,
                                                  cfg.sigma_w2, b)
            mus = np.concatenate([m[:, b] for m in out.mu if m.size])
            assert abs(mus.mean() - 1.0 / c_star) / (1.0 / c_star) < 0.05
            assert mus.std() / mus.mean() < 0.05


class TestGenieFixedPoint:
    def test_no_load_gives_noise_floor(self):
        geo = build_wyner_geometry(0.5)
        c = genie_asymptotic_fixed_point(geo, [0.0, 0.0], [2.0, 2.0], 1e-3, 0)
        assert c == pytest.approx(1e-3, rel=1e-10)

    def test_quadratic_oracle(self):
        # single term lam*alpha = 0.4, g = 1, sw2 = 0.01:
        # c^2 + 0.59 c - 0.01 = 0
        geo = build_wyner_geometry(0.0)   # g = I
        c = genie_asymptotic_fixed_point(geo, [0.4, 0.0], [1.0, 1.0], 0.01, 0)
        root = (-0.59 + np.sqrt(0.59 ** 2 + 4 * 0.01)) / 2
        assert c == pytest.approx(root, rel=1e-9)

    def test_bracket(self):
        geo = build_wyner_geometry(0.5)
        lam, alpha, sw2 = [0.1, 0.2], [2.0, 2.0], 1e-4
        for b in range(2):
            c = genie_asymptotic_fixed_point(geo, lam, alpha, sw2, b)
            hi = sw2 + np.sum(np.array(lam) * np.array(alpha) * geo.g[:, b])
            assert sw2 <= c <= hi

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            genie_asymptotic_fixed_point(build_wyner_geometry(0.5),
                                         [0.1, 0.1], [1, 1], 1e-4, 0, tol=0)


class TestConditionalStats:
    def setup_scene(self):
        cfg, geo, scene = scene_for(seed=6, L=512, lam=(0.2, 0.2))
        priors = make_priors(cfg, geo)
        noise = EffectiveNoise(np.full(cfg.F, 0.05))
        return cfg, geo, scene, priors, noise

    def test_sure_event_matches_unconditional(self):
        # nu -> infinity: D_u is sure, the conditional moment equals the
        # unconditional mmse of active rows
        cfg, geo, scene, priors, noise = self.setup_scene()
        th_ad, se_ad, th_fa, _ = theory_conditional_moments(
            priors, noise, thresholds=np.full(2, 1e9), mc=100_000,
            rng_seq=np.random.SeedSequence(7))
        for u in range(2):
            # direct MC of E||h - eta(h + phi)||^2 with no conditioning
            rng = np.random.default_rng(9 + u)
            h = (rng.standard_normal((100_000, cfg.F))
                 + 1j * rng.standard_normal((100_000, cfg.F))) * np.sqrt(
                     priors[u].sigma / 2)
            phi = (rng.standard_normal((100_000, cfg.F))
                   + 1j * rng.standard_normal((100_000, cfg.F))) * np.sqrt(
                       noise.c / 2)
            from cfura.denoiser import posterior_mean
            direct = np.mean(np.linalg.norm(
                h - posterior_mean(h + phi, priors[u], noise), axis=1) ** 2)
            assert th_ad[u] == pytest.approx(direct, rel=0.02)

    def test_zero_sigma_fa_estimates_are_zero(self):
        cfg, geo, scene, priors, noise = self.setup_scene()
        zero_priors = [PriorParams(lam=0.2, sigma=np.zeros(cfg.F))
                       for _ in range(2)]
        _, _, th_fa, _ = theory_conditional_moments(
            zero_priors, noise, thresholds=np.full(2, 1.0), mc=10_000,
            rng_seq=np.random.SeedSequence(10))
        assert np.allclose(th_fa, 0.0)

    def test_insufficient_samples_raises(self):
        cfg, geo, scene, priors, noise = self.setup_scene()
        with pytest.raises(InsufficientSamplesError):
            theory_conditional_moments(priors, noise,
                                       thresholds=np.full(2, -1e9),
                                       mc=10_000,
                                       rng_seq=np.random.SeedSequence(11))

    def test_insufficient_can_flag_nan(self):
        cfg, geo, scene, priors, noise = self.setup_scene()
        th_ad, _, th_fa, _ = theory_conditional_moments(
            priors, noise, thresholds=np.full(2, -1e9), mc=10_000,
            rng_seq=np.random.SeedSequence(12), on_insufficient="nan")
        assert np.all(np.isnan(th_ad))

    def test_empty_empirical_sets_are_nan(self):
        cfg, geo, scene, priors, noise = self.setup_scene()
        decisions = [np.zeros_like(a) for a in scene.activity]  # nothing detected
        report = DetectionReport(decisions=decisions, p_md=np.zeros(2),
                                 p_fa=np.zeros(2), thresholds=np.zeros(2))

        class FakeTrace:
            x_final = [np.zeros_like(x) for x in scene.channels]

        stats = conditional_error_stats(scene, FakeTrace, report, priors,
                                        noise, mc=10_000)
        assert np.all(np.isnan(stats.moment_ad_empirical))
        assert np.all(stats.n_ad == 0)

    def test_odd_p_rejected(self):
        cfg, geo, scene, priors, noise = self.setup_scene()
        report = DetectionReport(decisions=scene.activity, p_md=np.zeros(2),
                                 p_fa=np.zeros(2), thresholds=np.zeros(2))

        class FakeTrace:
            x_final = scene.channels

        with pytest.raises(ValueError):
            conditional_error_stats(scene, FakeTrace, report, priors, noise, p=3)
