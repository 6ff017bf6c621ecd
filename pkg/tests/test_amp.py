import numpy as np
import pytest

from cfura.amp import amp_run, amp_step, empirical_mse_matrix, initial_state
from cfura.denoiser import EffectiveNoise, PriorParams
from cfura.model import (SystemConfig, build_wyner_geometry, make_priors,
                         sample_scene)
from cfura.rng import StreamFactory
from cfura.se import se_recursion


def small_setup(L=256, lam=(0.1, 0.2), snr=10.0, T=4, seed=0, mc=20_000):
    geo = build_wyner_geometry(0.5)
    cfg = SystemConfig(L=L, U=2, B=2, M=2, alpha=np.array([2.0, 2.0]),
                       lam=np.array(lam), snr=snr, T=T, seed=seed)
    priors = make_priors(cfg, geo)
    fac = StreamFactory(seed)
    trace = se_recursion(priors, cfg.n_codewords / cfg.L, cfg.sigma_w2, T,
                         mc, fac._seq["se"], M=cfg.M)
    streams = fac.trial_generators(1, names=("codebook", "activity",
                                             "channel", "noise"))[0]
    scene = sample_scene(cfg, geo, streams)
    return cfg, geo, priors, trace, scene


class TestEmpiricalMseMatrix:
    def test_zero_for_exact_estimate(self):
        x = np.ones((5, 3), dtype=complex)
        assert np.allclose(empirical_mse_matrix(x, x), 0)

    def test_trace_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 4)) + 1j * rng.standard_normal((50, 4))
        e = rng.standard_normal((50, 4)) + 1j * rng.standard_normal((50, 4))
        m = empirical_mse_matrix(x, x + e)
        assert np.trace(m).real == pytest.approx(
            np.linalg.norm(e) ** 2 / 50, rel=1e-12)

    def test_zero_estimate_recovers_prior_second_moment(self):
        cfg, geo, priors, _, scene = small_setup(L=1024)
        m = empirical_mse_matrix(scene.channels[0],
                                 np.zeros_like(scene.channels[0]))
        expect = priors[0].lam * priors[0].sigma
        n = scene.channels[0].shape[0]
        se = 5 * expect / np.sqrt(max(n * priors[0].lam, 1))
        assert np.all(np.abs(np.diag(m).real - expect) < se + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            empirical_mse_matrix(np.zeros((3, 2)), np.zeros((2, 2)))


class TestAmpStep:
    def test_first_step_is_matched_filter(self):
        cfg, geo, priors, trace, scene = small_setup()
        state = amp_step(initial_state(scene), scene, priors, trace.c_seq[0])
        assert np.allclose(state.z, scene.observation, rtol=0, atol=0)
        for u in range(2):
            r_expect = scene.codebooks[u].conj().T @ scene.observation
            assert np.allclose(state.r[u], r_expect, rtol=0, atol=0)

    def test_zero_prior_keeps_estimates_zero(self):
        cfg, geo, priors, trace, scene = small_setup()
        zero_priors = [PriorParams(lam=p.lam, sigma=np.zeros(cfg.F))
                       for p in priors]
        state = initial_state(scene)
        for t in range(3):
            state = amp_step(state, scene, zero_priors, trace.c_seq[t])
            assert all(np.all(x == 0) for x in state.x_hat)
            assert np.array_equal(state.z, scene.observation)

    def test_dimension_mismatch(self):
        cfg, geo, priors, trace, scene = small_setup()
        with pytest.raises(ValueError):
            amp_step(initial_state(scene), scene, priors,
                     EffectiveNoise(np.ones(6)))

    def test_permutation_equivariance(self):
        # permuting codewords and truth rows permutes R and X identically
        cfg, geo, priors, trace, scene = small_setup(L=128)
        perm = np.random.default_rng(3).permutation(scene.codebooks[0].shape[1])
        scene2 = sample_scene(cfg, geo, StreamFactory(0).trial_generators(
            1, names=("codebook", "activity", "channel", "noise"))[0])
        scene2.codebooks[0] = scene2.codebooks[0][:, perm]
        scene2.channels[0] = scene2.channels[0][perm]
        scene2.activity[0] = scene2.activity[0][perm]

        s1 = initial_state(scene)
        s2 = initial_state(scene2)
        for t in range(2):
            s1 = amp_step(s1, scene, priors, trace.c_seq[t])
            s2 = amp_step(s2, scene2, priors, trace.c_seq[t])
        assert np.allclose(s2.r[0], s1.r[0][perm], rtol=1e-10, atol=1e-13)
        assert np.allclose(s2.x_hat[0], s1.x_hat[0][perm], rtol=1e-10, atol=1e-13)
        assert np.allclose(s2.r[1], s1.r[1], rtol=1e-10, atol=1e-13)


class TestAmpRun:
    def test_zero_activity_zero_mse(self):
        cfg, geo, priors, trace, _ = small_setup()
        zero_priors = [PriorParams(lam=p.lam, sigma=np.zeros(cfg.F))
                       for p in priors]
        streams = StreamFactory(4).trial_generators(
            1, names=("codebook", "activity", "channel", "noise"))[0]
        cfg0 = SystemConfig(L=256, U=2, B=2, M=2, alpha=np.array([2.0, 2.0]),
                            lam=np.array([0.0, 0.0]), snr=10.0, T=cfg.T, seed=4)
        scene = sample_scene(cfg0, geo, streams)
        out = amp_run(scene, zero_priors, cfg0, trace.c_seq)
        assert np.all(out.mse == 0)
        assert out.mse_final == 0

    def test_reproducible_bit_exact(self):
        cfg, geo, priors, trace, scene = small_setup()
        m1 = amp_run(scene, priors, cfg, trace.c_seq).mse
        m2 = amp_run(scene, priors, cfg, trace.c_seq).mse
        assert np.array_equal(m1, m2)

    def test_schedule_length_mismatch(self):
        cfg, geo, priors, trace, scene = small_setup()
        with pytest.raises(ValueError):
            amp_run(scene, priors, cfg, trace.c_seq[:-1])

    def test_se_onsager_mode_requires_sampler(self):
        cfg, geo, priors, trace, scene = small_setup()
        with pytest.raises(ValueError):
            amp_run(scene, priors, cfg, trace.c_seq, onsager_mode="se")

    def test_unknown_onsager_mode(self):
        cfg, geo, priors, trace, scene = small_setup()
        with pytest.raises(ValueError):
            amp_run(scene, priors, cfg, trace.c_seq, onsager_mode="bogus")


class TestDecoupling:
    # single-trial smoke bounds; the 5%-level versions average over 10
    # trials and live in the acceptance suite, where single-trial
    # trajectory dispersion (~10% at this load) is averaged out
    def test_row_covariances_match_decoupled_model(self):
        cfg, geo, priors, trace, scene = small_setup(L=1024, T=4, mc=50_000,
                                                     seed=4)
        out = amp_run(scene, priors, cfg, trace.c_seq)
        c_fin = trace.c_seq[-1].diag()
        for u in range(2):
            act = scene.activity[u].astype(bool)
            r = out.r_final[u]
            cov_in = (np.abs(r[~act]) ** 2).mean(axis=0)
            rel_in = np.linalg.norm(cov_in - c_fin) / np.linalg.norm(c_fin)
            assert rel_in < 0.2
            cov_ac = (np.abs(r[act]) ** 2).mean(axis=0)
            target = priors[u].sigma + c_fin
            rel_ac = np.linalg.norm(cov_ac - target) / np.linalg.norm(target)
            assert rel_ac < 0.1

    def test_mse_matrix_concentrates_on_se(self):
        cfg, geo, priors, trace, scene = small_setup(L=1024, T=4, mc=50_000,
                                                     seed=4)
        out = amp_run(scene, priors, cfg, trace.c_seq)
        for u in range(2):
            emp = empirical_mse_matrix(scene.channels[u], out.x_final[u])
            se_pred = trace.mmse_seq[-1][u]
            rel = np.linalg.norm(emp - se_pred) / np.linalg.norm(se_pred)
            assert rel < 0.3


def test_trace_tracks_se_averaged_over_trials():
    geo = build_wyner_geometry(0.5)
    cfg = SystemConfig(L=1024, U=2, B=2, M=2, alpha=np.array([2.0, 2.0]),
                       lam=np.array([0.1, 0.2]), snr=10.0, T=6, seed=7)
    priors = make_priors(cfg, geo)
    fac = StreamFactory(7)
    trace = se_recursion(priors, cfg.n_codewords / cfg.L, cfg.sigma_w2, 6,
                         50_000, fac._seq["se"], M=cfg.M)
    streams = fac.trial_generators(4, names=("codebook", "activity",
                                             "channel", "noise"))
    mses = [amp_run(sample_scene(cfg, geo, streams[t]), priors, cfg,
                    trace.c_seq).mse for t in range(4)]
    pred = trace.mse_trace()
    rel = np.abs(np.mean(mses, axis=0) - pred) / pred
    assert np.all(rel < 0.15)


def test_online_noise_mode_tracks_se():
    cfg, geo, priors, trace, scene = small_setup(L=1024, T=5, mc=40_000, seed=5)
    out = amp_run(scene, priors, cfg, trace.c_seq, noise_mode="online")
    pred = trace.mse_trace()
    rel = np.abs(out.mse - pred) / pred
    assert np.all(rel < 0.3)
    with pytest.raises(ValueError):
        amp_run(scene, priors, cfg, trace.c_seq, noise_mode="bogus")
