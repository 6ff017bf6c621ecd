import numpy as np
import pytest

from cfura.denoiser import (EffectiveNoise, PriorParams, jacobian,
                            log_likelihood_ratio, posterior_mean)

# scalar worked example: F=1, lam=0.1, Sigma=1, C=0.5, r=1
#   ln Lambda_map = ln 9 + ln 3 - (2 - 2/3) = ln 27 - 4/3
SCALAR_LLR = np.log(27.0) - 4.0 / 3.0
SCALAR_MEAN = (2.0 / 3.0) / (1.0 + np.exp(SCALAR_LLR))


def scalar_pair():
    return (PriorParams(lam=0.1, sigma=np.array([1.0])),
            EffectiveNoise(np.array([0.5])))


def random_pair(rng, F=4, lam=0.2, dense=False):
    sig = rng.uniform(0.2, 2.0, F)
    c = rng.uniform(0.1, 1.0, F)
    if dense:
        return (PriorParams(lam=lam, sigma=np.diag(sig.astype(complex))),
                EffectiveNoise(np.diag(c.astype(complex))))
    return PriorParams(lam=lam, sigma=sig), EffectiveNoise(c)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def fd_jacobian(r, prior, noise, eps=1e-5):
    """Central finite differences under the Wirtinger convention
    d/dr = (d/dx - i d/dy) / 2."""
    F = r.size
    out = np.zeros((F, F), dtype=complex)
    for i in range(F):
        e = np.zeros(F)
        e[i] = eps
        dx = (posterior_mean(r + e, prior, noise)
              - posterior_mean(r - e, prior, noise)) / (2 * eps)
        dy = (posterior_mean(r + 1j * e, prior, noise)
              - posterior_mean(r - 1j * e, prior, noise)) / (2 * eps)
        out[i] = 0.5 * (dx - 1j * dy)
    return out


class TestLogLikelihoodRatio:
    def test_scalar_example(self):
        prior, noise = scalar_pair()
        got = log_likelihood_ratio(np.array([1.0 + 0j]), prior, noise)
        assert got == pytest.approx(SCALAR_LLR, rel=1e-12)

    def test_zero_sigma_constant(self):
        prior = PriorParams(lam=0.3, sigma=np.zeros(3))
        noise = EffectiveNoise(np.array([0.5, 1.0, 2.0]))
        rng = np.random.default_rng(0)
        for _ in range(5):
            r = crandn(rng, 3) * 10
            assert log_likelihood_ratio(r, prior, noise) == pytest.approx(
                np.log(0.7 / 0.3), rel=1e-12)

    def test_zero_input(self):
        prior, noise = random_pair(np.random.default_rng(1))
        got = log_likelihood_ratio(np.zeros(4, dtype=complex), prior, noise)
        expect = (np.log(0.8 / 0.2)
                  + np.sum(np.log1p(prior.sigma / noise.c)))
        assert got == pytest.approx(expect, rel=1e-12)

    def test_log_domain_no_overflow(self):
        prior, noise = random_pair(np.random.default_rng(2))
        r = 1e8 * (1 + 1j) * np.ones(4)
        val = log_likelihood_ratio(r, prior, noise)
        assert np.isfinite(val) and val < 0

    def test_exponential_consistency_with_product_form(self):
        # exp(llr) equals the direct density-ratio evaluation where the
        # latter does not overflow
        rng = np.random.default_rng(3)
        prior, noise = random_pair(rng)
        sig, c, lam = prior.sigma, noise.c, prior.lam
        for _ in range(50):
            r = crandn(rng, 4)
            quad = np.sum(np.abs(r) ** 2 * (1 / c - 1 / (sig + c)))
            direct = ((1 - lam) / lam) * np.prod((sig + c) / c) * np.exp(-quad)
            got = np.exp(log_likelihood_ratio(r, prior, noise))
            assert got == pytest.approx(direct, rel=1e-10)


class TestPosteriorMean:
    def test_scalar_example(self):
        prior, noise = scalar_pair()
        got = posterior_mean(np.array([1.0 + 0j]), prior, noise)
        assert got[0] == pytest.approx(SCALAR_MEAN, rel=1e-12)

    def test_zero_sigma(self):
        prior = PriorParams(lam=0.3, sigma=np.zeros(3))
        noise = EffectiveNoise(np.ones(3))
        r = crandn(np.random.default_rng(4), 3)
        assert np.all(posterior_mean(r, prior, noise) == 0)

    def test_lam_one_is_linear_mmse(self):
        rng = np.random.default_rng(5)
        sig = rng.uniform(0.2, 2.0, 4)
        c = rng.uniform(0.1, 1.0, 4)
        prior = PriorParams(lam=1.0, sigma=sig)
        noise = EffectiveNoise(c)
        r = crandn(rng, 4)
        assert np.allclose(posterior_mean(r, prior, noise),
                           r * sig / (sig + c), rtol=1e-12)

    def test_shrinkage(self):
        rng = np.random.default_rng(6)
        prior, noise = random_pair(rng)
        for _ in range(100):
            r = crandn(rng, 4) * rng.uniform(0.1, 100)
            eta = posterior_mean(r, prior, noise)
            lin = r * prior.sigma / (prior.sigma + noise.c)
            # equality holds (to rounding) where the activity posterior
            # saturates at 1
            assert np.linalg.norm(eta) <= np.linalg.norm(lin) * (1 + 1e-12)

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(7)
        prior, noise = random_pair(rng)
        R = crandn(rng, 10, 4)
        batch = posterior_mean(R, prior, noise)
        rows = np.stack([posterior_mean(R[i], prior, noise) for i in range(10)])
        assert np.allclose(batch, rows, rtol=0, atol=0)


class TestJacobian:
    @pytest.mark.parametrize("dense", [False, True])
    def test_finite_difference_oracle(self, dense):
        rng = np.random.default_rng(8)
        prior, noise = random_pair(rng, dense=dense)
        for _ in range(25):
            r = crandn(rng, 4) * rng.uniform(0.3, 3.0)
            J = jacobian(r, prior, noise)
            Jfd = fd_jacobian(r, prior, noise)
            assert np.abs(J - Jfd).max() / np.abs(Jfd).max() < 1e-5

    def test_zero_sigma(self):
        prior = PriorParams(lam=0.3, sigma=np.zeros(3))
        noise = EffectiveNoise(np.ones(3))
        r = crandn(np.random.default_rng(9), 3)
        assert np.all(jacobian(r, prior, noise) == 0)

    def test_lam_one_constant(self):
        rng = np.random.default_rng(10)
        sig = rng.uniform(0.2, 2.0, 4)
        c = rng.uniform(0.1, 1.0, 4)
        prior = PriorParams(lam=1.0, sigma=sig)
        noise = EffectiveNoise(c)
        J1 = jacobian(crandn(rng, 4), prior, noise)
        J2 = jacobian(crandn(rng, 4) * 50, prior, noise)
        assert np.allclose(J1, np.diag(sig / (sig + c)), rtol=1e-12)
        assert np.allclose(J1, J2, rtol=1e-12)

    def test_bounded_for_large_inputs(self):
        # sup ||eta'||_F stays bounded as ||r|| grows to 1e3
        rng = np.random.default_rng(11)
        prior, noise = random_pair(rng)
        norms = []
        for scale in (1.0, 10.0, 100.0, 1000.0):
            vals = [np.linalg.norm(jacobian(scale * crandn(rng, 4), prior, noise))
                    for _ in range(200)]
            norms.append(max(vals))
        assert np.isfinite(norms).all()
        assert max(norms[2], norms[3]) <= max(norms[0], norms[1]) + 1e-9

    def test_lipschitz_from_jacobian_bound(self):
        rng = np.random.default_rng(12)
        prior, noise = random_pair(rng)
        sup = max(np.linalg.norm(jacobian(crandn(rng, 4) * s, prior, noise), 2)
                  for s in (0.5, 1, 2, 5, 20) for _ in range(200))
        # the complex map r -> eta(r) is non-holomorphic; its real-linear
        # operator norm is within 2x of the Wirtinger block norm
        K = 2.0 * sup + 1e-9
        for _ in range(200):
            r1 = crandn(rng, 4) * rng.uniform(0.1, 20)
            r2 = r1 + crandn(rng, 4) * rng.uniform(1e-3, 1.0)
            d_eta = np.linalg.norm(posterior_mean(r1, prior, noise)
                                   - posterior_mean(r2, prior, noise))
            assert d_eta <= K * np.linalg.norm(r1 - r2)


class TestValidation:
    def test_lam_zero_rejected(self):
        with pytest.raises(ValueError):
            PriorParams(lam=0.0, sigma=np.ones(2))

    def test_singular_noise_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            EffectiveNoise(np.array([1.0, 0.0]))

    def test_dense_non_pd_rejected(self):
        prior = PriorParams(lam=0.5, sigma=np.eye(2, dtype=complex))
        bad = EffectiveNoise(np.array([[1.0, 2.0], [2.0, 1.0]], dtype=complex))
        with pytest.raises(np.linalg.LinAlgError):
            log_likelihood_ratio(np.zeros(2, dtype=complex), prior, bad)

    def test_tau_block_roundtrip(self):
        noise = EffectiveNoise.from_tau([0.5, 2.0], M=3)
        assert np.array_equal(noise.c, [0.5, 0.5, 0.5, 2.0, 2.0, 2.0])
        assert np.array_equal(noise.tau(3), [0.5, 2.0])


def test_dense_and_diagonal_paths_agree():
    rng = np.random.default_rng(13)
    sig = rng.uniform(0.2, 2.0, 4)
    c = rng.uniform(0.1, 1.0, 4)
    pd, nd = PriorParams(lam=0.2, sigma=sig), EffectiveNoise(c)
    pm = PriorParams(lam=0.2, sigma=np.diag(sig.astype(complex)))
    nm = EffectiveNoise(np.diag(c.astype(complex)))
    for _ in range(20):
        r = crandn(rng, 4) * rng.uniform(0.2, 5)
        assert log_likelihood_ratio(r, pd, nd) == pytest.approx(
            log_likelihood_ratio(r, pm, nm), rel=1e-10)
        assert np.allclose(posterior_mean(r, pd, nd),
                           posterior_mean(r, pm, nm), rtol=1e-10)
        assert np.allclose(jacobian(r, pd, nd), jacobian(r, pm, nm),
                           rtol=1e-9, atol=1e-12)
