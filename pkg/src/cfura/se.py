"""State evolution of the multi-source matrix AMP.

The effective-noise covariance sequence follows the diagonal recursion

    C^(1)   = sigma_w^2 I + sum_u alpha_u lambda_u Sigma_u      (zero init)
    C^(t+1) = sigma_w^2 I + sum_u alpha_u mmse(x_u | x_u + z C^(t) 1/2)

where the per-location mmse covariance is estimated by Monte Carlo.  The
Bernoulli activity is stratified out exactly: conditioning on a in {0, 1}
leaves only the Gaussian randomness of (h, z), which removes the dominant
variance source at small lambda.  Draws are regenerated from fixed
per-location streams, so every iteration sees common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import EffectiveNoise, kernel
from .rng import complex_normal

MIN_MC_SAMPLES = 1000


@dataclass
class SETrace:
    """Effective-noise trajectory and per-iteration mmse predictions."""

    c_seq: list                 # EffectiveNoise per iteration, C^(t,t)
    mmse_seq: list              # per iteration: list over locations of F x F mmse
    c_star: EffectiveNoise
    converged: bool
    iterations: int
    sigma_w2: float

    def mse_trace(self):
        """Predicted total normalized MSE tr(C^(t,t) - sigma_w^2 I) per t."""
        return np.array([c.diag().sum() - c.F * self.sigma_w2 for c in self.c_seq])

    def final_mse_prediction(self, alpha):
        """Predicted MSE of the post-iteration estimate X^(T+1)."""
        return float(sum(a * np.trace(m).real
                         for a, m in zip(alpha, self.mmse_seq[-1])))


class SESampler:
    """Common-random-number base draws for the SE expectations.

    Each location owns two fixed CN(0, I) sample blocks (channel direction
    and effective noise direction); re-instantiating generators from the
    stored SeedSequences reproduces them bit-exactly at every SE iteration
    without holding all locations in memory.
    """

    def __init__(self, n_locations, mc_samples, rng_seq):
        if mc_samples < MIN_MC_SAMPLES:
            raise ValueError(
                f"mc_samples = {mc_samples} is below {MIN_MC_SAMPLES}; the "
                "estimator is too noisy to drive the SE recursion")
        self.mc = int(mc_samples)
        self.seqs = rng_seq.spawn(n_locations)

    def draws(self, u, F):
        rng = np.random.default_rng(self.seqs[u])
        zh = complex_normal(rng, (self.mc, F))
        zn = complex_normal(rng, (self.mc, F))
        return zh, zn


def _sample_h(prior, zh):
    if prior.diagonal:
        return zh * np.sqrt(np.real(prior.sigma))
    w, v = np.linalg.eigh(prior.sigma)
    w = np.clip(w, 0.0, None)
    return zh @ ((v * np.sqrt(w)) @ v.conj().T)


def mmse_matrix(prior, noise, sampler, u, return_stderr=False):
    """Monte Carlo mmse covariance E[(x - eta(x+phi))^H (x - eta(x+phi))].

    Stratified over the activity bit:
        (1-lam) * E[eta(z C^1/2)^H eta(z C^1/2)]
      + lam     * E[(h - eta(h + z C^1/2))^H (h - eta(h + z C^1/2))].
    """
    ker = kernel(prior, noise)
    F = noise.F
    zh, zn = sampler.draws(u, F)
    phi = zn * noise.sqrt() if noise.diagonal else zn @ noise.sqrt()
    lam = prior.lam
    n = sampler.mc

    e0 = ker.mean(phi)                      # error when inactive: 0 - eta(phi)
    h = _sample_h(prior, zh)
    e1 = h - ker.mean(h + phi)              # error when active
    m0 = e0.conj().T @ e0 / n
    m1 = e1.conj().T @ e1 / n
    out = (1.0 - lam) * m0 + lam * m1
    out = 0.5 * (out + out.conj().T)
    if not return_stderr:
        return out
    # entrywise standard error of the stratified estimator
    a0 = np.abs(e0) ** 2
    a1 = np.abs(e1) ** 2
    v0 = (a0.T @ a0) / n - np.abs(m0) ** 2
    v1 = (a1.T @ a1) / n - np.abs(m1) ** 2
    stderr = np.sqrt(((1 - lam) ** 2 * np.clip(v0, 0, None)
                      + lam ** 2 * np.clip(v1, 0, None)) / n)
    return out, stderr


def mmse_mc(prior, noise, mc_samples, rng_seq, return_stderr=False):
    """One-off mmse covariance estimate from a fresh sample block."""
    sampler = SESampler(1, mc_samples, rng_seq)
    return mmse_matrix(prior, noise, sampler, 0, return_stderr=return_stderr)


def _project(c_diag_or_mat, M, mode):
    """Structural projection of an accumulated covariance update."""
    if mode == "dense":
        return EffectiveNoise(c_diag_or_mat)
    d = np.real(np.diag(c_diag_or_mat)) if c_diag_or_mat.ndim == 2 else np.real(c_diag_or_mat)
    if mode == "block":
        d = np.repeat(d.reshape(-1, M).mean(axis=1), M)
    return EffectiveNoise(d)


def initial_covariance(priors, alpha, sigma_w2, M, mode="block"):
    """C^(1,1) under zero initialization: sigma_w^2 I + sum alpha lam Sigma."""
    F = priors[0].sigma.shape[0]
    if mode == "dense":
        acc = sigma_w2 * np.eye(F, dtype=complex)
        for a, pr in zip(alpha, priors):
            sig = pr.sigma if pr.sigma.ndim == 2 else np.diag(pr.sigma.astype(complex))
            acc = acc + a * pr.lam * sig
        return EffectiveNoise(acc)
    acc = sigma_w2 * np.ones(F)
    for a, pr in zip(alpha, priors):
        acc = acc + a * pr.lam * np.real(pr.sigma if pr.sigma.ndim == 1 else np.diag(pr.sigma))
    return _project(acc, M, mode)


def _se_iterate(priors, alpha, sigma_w2, sampler, M, mode, c0, max_steps, tol):
    F = priors[0].sigma.shape[0]
    c_seq = [c0]
    mmse_seq = []
    converged = False
    for _ in range(max_steps):
        cur = c_seq[-1]
        mm = [mmse_matrix(pr, cur, sampler, u) for u, pr in enumerate(priors)]
        mmse_seq.append(mm)
        if mode == "dense":
            acc = sigma_w2 * np.eye(F, dtype=complex)
            for a, m in zip(alpha, mm):
                acc = acc + a * m
            nxt = EffectiveNoise(acc)
        else:
            acc = sigma_w2 * np.ones(F)
            for a, m in zip(alpha, mm):
                acc = acc + a * np.real(np.diag(m))
            nxt = _project(acc, M, mode)
        if tol is not None:
            rel = np.max(np.abs(nxt.diag() - cur.diag()) / cur.diag())
            if rel < tol:
                converged = True
                c_seq.append(nxt)
                break
        c_seq.append(nxt)
    return c_seq, mmse_seq, converged


def se_recursion(priors, alpha, sigma_w2, T, mc_samples, rng_seq, M=1, mode="block"):
    """Run exactly T iterations of the diagonal SE recursion.

    Returns an SETrace with c_seq = [C^(1,1), ..., C^(T,T)] and the mmse
    matrices evaluated at each of them (so mmse_seq[-1] predicts the error
    of the final denoised estimate).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    sampler = SESampler(len(priors), mc_samples, rng_seq)
    c0 = initial_covariance(priors, alpha, sigma_w2, M, mode)
    c_seq, mmse_seq, _ = _se_iterate(priors, alpha, sigma_w2, sampler, M, mode,
                                     c0, T, tol=None)
    c_seq = c_seq[:T]
    # mmse at the final C^(T,T) as well (already computed for t < T)
    if len(mmse_seq) < T:
        mmse_seq.append([mmse_matrix(pr, c_seq[-1], sampler, u)
                         for u, pr in enumerate(priors)])
    mmse_seq = mmse_seq[:T]
    return SETrace(c_seq=c_seq, mmse_seq=mmse_seq, c_star=c_seq[-1],
                   converged=False, iterations=T, sigma_w2=sigma_w2)


def se_fixed_point(priors, alpha, sigma_w2, mc_samples, rng_seq, M=1,
                   mode="block", tol=1e-4, max_iter=200):
    """Iterate the SE recursion from zero initialization until the maximum
    relative change of any diagonal entry falls below tol.

    Non-convergence within max_iter is reported through the returned trace,
    not raised: the caller gets the last iterate either way.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    sampler = SESampler(len(priors), mc_samples, rng_seq)
    c0 = initial_covariance(priors, alpha, sigma_w2, M, mode)
    c_seq, mmse_seq, converged = _se_iterate(priors, alpha, sigma_w2, sampler,
                                             M, mode, c0, max_iter, tol)
    return SETrace(c_seq=c_seq, mmse_seq=mmse_seq, c_star=c_seq[-1],
                   converged=converged, iterations=len(c_seq) - 1,
                   sigma_w2=sigma_w2)


def _log_gauss(r, cov: EffectiveNoise):
    """Row-wise ln CN(r | 0, cov)."""
    F = cov.F
    if cov.diagonal:
        d = np.real(cov.c)
        quad = (np.abs(r) ** 2 / d).sum(axis=1)
        logdet = np.sum(np.log(d))
    else:
        w, v = np.linalg.eigh(cov.c)
        quad = (np.abs(r @ v) ** 2 / w).sum(axis=1)
        logdet = np.sum(np.log(w))
    return -F * np.log(np.pi) - logdet - quad


def rs_mutual_information(priors, alpha, c_star, sigma_w2, mc_samples, rng_seq):
    """Replica-symmetric normalized mutual information in nats.

    I = sum_u alpha_u I(x_u; x_u + z C*^1/2) + sigma_w^2 tr(C*^-1)
        + ln |C*| - ln |e sigma_w^2 I|,

    with each per-location term estimated as h(r) - ln|pi e (Sigma_u + ...)|
    via the exact two-component mixture density of r.  Returns (value,
    standard_error).
    """
    sampler = SESampler(len(priors), mc_samples, rng_seq)
    F = c_star.F
    logdet_c = float(np.sum(np.log(c_star.diag()))) if c_star.diagonal else \
        float(np.linalg.slogdet(c_star.c)[1])
    inv_trace = float(np.sum(1.0 / c_star.diag())) if c_star.diagonal else \
        float(np.trace(np.linalg.inv(c_star.c)).real)

    total = sigma_w2 * inv_trace + logdet_c - F * (1.0 + np.log(sigma_w2))
    var = 0.0
    n = sampler.mc
    for u, (a, pr) in enumerate(zip(alpha, priors)):
        lam = pr.lam
        zh, zn = sampler.draws(u, F)
        phi = zn * c_star.sqrt() if c_star.diagonal else zn @ c_star.sqrt()
        h = _sample_h(pr, zh)
        sig_mat = pr.sigma if pr.sigma.ndim == 1 else pr.sigma
        if pr.diagonal and c_star.diagonal:
            mix_cov = EffectiveNoise(np.real(sig_mat) + np.real(c_star.c))
        else:
            smat = sig_mat if sig_mat.ndim == 2 else np.diag(sig_mat.astype(complex))
            cmat = c_star.c if not c_star.diagonal else np.diag(c_star.c.astype(complex))
            mix_cov = EffectiveNoise(smat + cmat)

        def neg_log_p(r):
            with np.errstate(divide="ignore"):
                l0 = _log_gauss(r, c_star) + np.log(1.0 - lam)
                l1 = _log_gauss(r, mix_cov) + np.log(lam)
            hi = np.maximum(l0, l1)
            return -(hi + np.log(np.exp(l0 - hi) + np.exp(l1 - hi)))

        # h(r) stratified over the activity bit; entropy of the noise is exact
        s0 = neg_log_p(phi)
        s1 = neg_log_p(h + phi)
        h_r = (1.0 - lam) * s0.mean() + lam * s1.mean()
        log_noise_ent = F * (1.0 + np.log(np.pi)) + logdet_c
        total += a * (h_r - log_noise_ent)
        var += a ** 2 * ((1 - lam) ** 2 * s0.var() + lam ** 2 * s1.var()) / n
    return float(total), float(np.sqrt(var))
