"""Channel-estimation error statistics and the genie-aided MMSE baseline.

The AMP estimate of an active, detected message behaves like the denoiser
applied to h + z C^{1/2} conditioned on the detection event, so its
conditional moments are estimated by rejection sampling of that event.  The
genie estimator knows the true active set and applies per-RU linear MMSE;
its per-coefficient error concentrates on g / (1 + g/c_b*) with c_b* from a
scalar fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .denoiser import kernel
from .rng import complex_normal

MIN_ACCEPT_RATE = 1e-3


class InsufficientSamplesError(RuntimeError):
    """Rejection sampling accepted too few draws for a trustworthy mean."""


@dataclass
class ConditionalErrorReport:
    p: int
    # detected-active set A_d
    moment_ad_empirical: np.ndarray        # E ||h - h_hat||^p per location
    moment_ad_theory: np.ndarray
    moment_ad_theory_stderr: np.ndarray
    n_ad: np.ndarray
    # false-alarm set A_fa
    moment_fa_empirical: np.ndarray        # E ||h_hat||^p per location
    moment_fa_theory: np.ndarray
    moment_fa_theory_stderr: np.ndarray
    n_fa: np.ndarray


MIN_ACCEPT_COUNT = 100


def _accepted_moment(values, accept, what):
    """Conditional mean + stderr over accepted draws.

    Rejects estimates whose conditioning event was both rare (acceptance
    below 1e-3) and thinly sampled (< 100 accepted draws); a rare event
    with enough accepted samples still yields a trustworthy mean.
    """
    n = accept.size
    k = int(accept.sum())
    if k / n < MIN_ACCEPT_RATE and k < MIN_ACCEPT_COUNT:
        raise InsufficientSamplesError(
            f"{what}: acceptance rate {k / n:.2e} below {MIN_ACCEPT_RATE:.0e} "
            f"with only {k} accepted draws")
    sel = values[accept]
    return float(sel.mean()), float(sel.std(ddof=1) / np.sqrt(k)) if k > 1 else np.nan


def theory_conditional_moments(priors, noise, thresholds, p=2, mc=100_000,
                               rng_seq=None, on_insufficient="raise"):
    """Decoupled-model conditional moments by rejection Monte Carlo.

    Per location: E[||h - eta(h + z C^1/2)||^p | D_u] over the detection
    event D_u and E[||eta(z C^1/2)||^p | F_u] over the false-alarm event,
    each with its MC standard error.  A conditioning event too rare to
    sample either raises InsufficientSamplesError or, with
    on_insufficient="nan", flags that entry as NaN.
    """
    if rng_seq is None:
        rng_seq = np.random.SeedSequence(0xC0ED)
    U = len(priors)
    seqs = rng_seq.spawn(U)
    th_ad = np.empty(U)
    th_ad_se = np.empty(U)
    th_fa = np.empty(U)
    th_fa_se = np.empty(U)

    def guarded(vals, accept, what):
        try:
            return _accepted_moment(vals, accept, what)
        except InsufficientSamplesError:
            if on_insufficient == "nan":
                return np.nan, np.nan
            raise

    for u in range(U):
        ker = kernel(priors[u], noise)
        rng = np.random.default_rng(seqs[u])
        zh = complex_normal(rng, (mc, noise.F))
        zn = complex_normal(rng, (mc, noise.F))
        h = zh * np.sqrt(np.real(priors[u].sigma)) if priors[u].diagonal \
            else zh @ _cov_sqrt(priors[u].sigma)
        phi = zn * noise.sqrt() if noise.diagonal else zn @ noise.sqrt()
        nu_log = thresholds[u]

        r1 = h + phi
        in_d = ker.log_lr(r1, prior_odds=False) <= nu_log
        vals = np.linalg.norm(h - ker.mean(r1), axis=1) ** p
        th_ad[u], th_ad_se[u] = guarded(vals, in_d, f"D_{u}")

        in_f = ker.log_lr(phi, prior_odds=False) < nu_log
        vals = np.linalg.norm(ker.mean(phi), axis=1) ** p
        th_fa[u], th_fa_se[u] = guarded(vals, in_f, f"F_{u}")
    return th_ad, th_ad_se, th_fa, th_fa_se


def empirical_conditional_moments(scene, trace, report, p=2):
    """Per-location conditional moment sums over A_d and A_fa of one scene.

    Returns (sum_ad, n_ad, sum_fa, n_fa); sums rather than means so that
    trials pool exactly.
    """
    U = scene.config.U
    sum_ad = np.zeros(U)
    sum_fa = np.zeros(U)
    n_ad = np.zeros(U, dtype=int)
    n_fa = np.zeros(U, dtype=int)
    for u in range(U):
        act = scene.activity[u].astype(bool)
        dec = report.decisions[u].astype(bool)
        ad = act & dec
        fa = ~act & dec
        n_ad[u] = ad.sum()
        n_fa[u] = fa.sum()
        if n_ad[u]:
            err = np.linalg.norm(scene.channels[u][ad] - trace.x_final[u][ad], axis=1)
            sum_ad[u] = float((err ** p).sum())
        if n_fa[u]:
            sum_fa[u] = float((np.linalg.norm(trace.x_final[u][fa], axis=1) ** p).sum())
    return sum_ad, n_ad, sum_fa, n_fa


def conditional_error_stats(scene, trace, report, priors, noise, p=2,
                            mc=None, rng_seq=None):
    """Empirical vs predicted conditional error moments of order p.

    Empirical side: over the detected-active set A_d, ||h - h_hat||^p with
    h_hat the final AMP estimate; over the false-alarm set A_fa, ||h_hat||^p.
    Theory side: the same moments of the decoupled model conditioned on the
    detection events, estimated by rejection Monte Carlo.  Empty empirical
    sets yield NaN (undefined), never zero.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be a positive even integer")
    config = scene.config
    mc = int(mc or config.mc_cond)
    if rng_seq is None:
        rng_seq = np.random.SeedSequence(config.seed + 0x5EED)

    sum_ad, n_ad, sum_fa, n_fa = empirical_conditional_moments(scene, trace, report, p)
    with np.errstate(invalid="ignore"):
        emp_ad = np.where(n_ad > 0, sum_ad / np.maximum(n_ad, 1), np.nan)
        emp_fa = np.where(n_fa > 0, sum_fa / np.maximum(n_fa, 1), np.nan)
    th_ad, th_ad_se, th_fa, th_fa_se = theory_conditional_moments(
        priors, noise, report.thresholds, p=p, mc=mc, rng_seq=rng_seq)
    return ConditionalErrorReport(
        p=p,
        moment_ad_empirical=emp_ad, moment_ad_theory=th_ad,
        moment_ad_theory_stderr=th_ad_se, n_ad=n_ad,
        moment_fa_empirical=emp_fa, moment_fa_theory=th_fa,
        moment_fa_theory_stderr=th_fa_se, n_fa=n_fa)


def _cov_sqrt(sigma):
    w, v = np.linalg.eigh(sigma)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


@dataclass
class GenieResult:
    active_index: list            # per location: indices of active rows
    estimates: list               # per location: N~_u x F genie estimates
    mse_direct: list              # per location: N~_u x B, Gram-form MSE
    mse_sherman: list             # per location: N~_u x B, g/(1+g mu) form
    mu: list                      # per location: N~_u x B
    errors_sq: list = field(default_factory=list)   # per location: N~_u x B
    # empirical ||h_b - h_hat_b||^2 per RU block


def genie_mmse_estimate(scene, dual=None):
    """Linear MMSE channel estimates given the true active set.

    Per RU b the estimator whitens with K_b = sum_u g_{u,b} S~_u S~_u^H +
    sigma_w^2 I.  With few active codewords the Gram (codeword-space) form of
    K_b^{-1} is used instead of the L x L factorization; both produce
    identical estimates.
    """
    config = scene.config
    L, M, B = config.L, config.M, config.B
    g = scene.geometry.g

    active = [np.flatnonzero(scene.activity[u]) for u in range(config.U)]
    cols = []
    owners = []
    for u in range(config.U):
        if active[u].size:
            cols.append(scene.codebooks[u][:, active[u]])
            owners.append(np.full(active[u].size, u))
    if not cols:
        return GenieResult(active_index=active,
                           estimates=[np.zeros((0, config.F), dtype=complex)] * config.U,
                           mse_direct=[np.zeros((0, B))] * config.U,
                           mse_sherman=[np.zeros((0, B))] * config.U,
                           mu=[np.zeros((0, B))] * config.U,
                           errors_sq=[np.zeros((0, B))] * config.U)
    s_act = np.hstack(cols)                      # L x N~
    owner = np.concatenate(owners)
    n_act = s_act.shape[1]
    if dual is None:
        dual = n_act < L // 2

    sw2 = config.sigma_w2
    est = np.zeros((n_act, config.F), dtype=complex)
    q_all = np.empty((n_act, B))
    for b in range(B):
        gv = g[owner, b]                         # per active column
        y_b = scene.observation[:, b * M:(b + 1) * M]
        if dual:
            # K^-1 = (I - S (sw2 G^-1 + S^H S)^-1 S^H) / sw2, needs g > 0
            pos = gv > 0
            sp = s_act[:, pos]
            core = sp.conj().T @ sp + np.diag(sw2 / gv[pos])
            cho = scipy.linalg.cho_factor(core)
            sty = sp.conj().T @ y_b
            kinv_y = (y_b - sp @ scipy.linalg.cho_solve(cho, sty)) / sw2
            sts = sp.conj().T @ s_act
            kinv_s = (s_act - sp @ scipy.linalg.cho_solve(cho, sts)) / sw2
        else:
            k_b = (s_act * gv) @ s_act.conj().T + sw2 * np.eye(L)
            cho = scipy.linalg.cho_factor(k_b)
            kinv_y = scipy.linalg.cho_solve(cho, y_b)
            kinv_s = scipy.linalg.cho_solve(cho, s_act)
        est[:, b * M:(b + 1) * M] = gv[:, None] * (s_act.conj().T @ kinv_y)
        q_all[:, b] = np.einsum("ln,ln->n", s_act.conj(), kinv_s).real

    g_cols = g[owner]                            # N~ x B
    mse_direct = g_cols - g_cols ** 2 * q_all
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(g_cols > 0, q_all / (1.0 - g_cols * q_all), q_all / 1.0)
        mu = np.where(np.isfinite(mu), mu, np.inf)
    mse_sherman = np.where(np.isfinite(mu), g_cols / (1.0 + g_cols * mu), 0.0)

    # split the stacked rows back per location, plus empirical errors
    out_est, out_d, out_s, out_mu, out_err = [], [], [], [], []
    start = 0
    for u in range(config.U):
        k = active[u].size
        sl = slice(start, start + k)
        start += k
        out_est.append(est[sl])
        out_d.append(mse_direct[sl])
        out_s.append(mse_sherman[sl])
        out_mu.append(mu[sl])
        h_true = scene.channels[u][active[u]]
        diff = np.abs(h_true - est[sl]) ** 2
        out_err.append(diff.reshape(k, B, M).sum(axis=2))
    return GenieResult(active_index=active, estimates=out_est,
                       mse_direct=out_d, mse_sherman=out_s, mu=out_mu,
                       errors_sq=out_err)


def genie_asymptotic_fixed_point(geometry, lam, alpha, sigma_w2, b, tol=1e-12,
                                 max_iter=10_000):
    """Unique non-negative solution of
    c = sigma_w^2 + sum_u lam_u alpha_u g_{u,b} c / (g_{u,b} + c).

    The map is monotone on [sigma_w^2, sigma_w^2 + sum lam alpha g], so plain
    iteration from c = sigma_w^2 converges; mu_{u,n,b} -> 1/c*.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    g = geometry.g[:, b]
    c = float(sigma_w2)
    for _ in range(max_iter):
        nxt = sigma_w2 + float(np.sum(lam * alpha * g * c / (g + c)))
        if abs(nxt - c) < tol * max(nxt, sigma_w2):
            return nxt
        c = nxt
    return c
