"""Cluster formation, ACK power accounting, and UatF ergodic-rate bounds.

Each detected message is answered by maximal-ratio transmission from the Q
RUs with the largest nominal LSFCs for its location.  Rates use the
Use-and-then-Forget lower bound: only the conditional mean of the effective
gain carries signal, everything else (gain fluctuation, multiuser
interference, noise) is treated as noise.  The paper-side logs are natural;
rates are reported in bits/symbol (divided by ln 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import kernel
from .estimation import (MIN_ACCEPT_COUNT, MIN_ACCEPT_RATE,
                         InsufficientSamplesError)
from .rng import complex_normal

LN2 = np.log(2.0)


@dataclass
class ClusterMap:
    clusters: list      # per location: array of Q RU indices (sorted)
    coverage: list      # per RU: array of covered location indices


@dataclass
class MomentTables:
    """Conditional DL moment tables, one entry per (location, RU)."""

    m: np.ndarray           # U x B complex, E[h_b eta_b(.)^H | D]
    v: np.ndarray           # U x B real, Var(h_b eta_b(.)^H | D)
    z: np.ndarray           # U x B real, ACK energy coefficient
    p_md: np.ndarray        # per location
    p_fa: np.ndarray
    accept_d: np.ndarray    # acceptance rates of the conditioning events
    accept_f: np.ndarray


@dataclass
class RateReport:
    rate_uatf_bits: np.ndarray
    rate_genie_bits: np.ndarray
    rho_dl: float
    signal: np.ndarray
    interference: np.ndarray
    sigma_w2: float


def form_clusters(geometry, Q):
    """Q strongest RUs per location (ties to the smaller RU index)."""
    B = geometry.B
    if not 1 <= Q <= B:
        raise ValueError(f"Q must lie in [1, {B}]")
    clusters = []
    for u in range(geometry.U):
        order = sorted(range(B), key=lambda b: (-geometry.g[u, b], b))
        clusters.append(np.array(sorted(order[:Q]), dtype=int))
    coverage = [np.array([u for u in range(geometry.U) if b in clusters[u]], dtype=int)
                for b in range(B)]
    return ClusterMap(clusters=clusters, coverage=coverage)


def dl_conditional_moments(priors, noise, thresholds, p_md, p_fa, M,
                           mc=100_000, rng_seq=None):
    """Rejection-MC tables M_{u,b}, V_{u,b}, Z_{u,b}.

    The denoiser acts on the full F-vector; per-RU values take the b-th
    M-block of its input/output.  Z combines the detected-active energy,
    weighted by (1 - P_md), with the false-alarm energy weighted by
    (1/lambda - 1) P_fa.
    """
    U = len(priors)
    F = noise.F
    B = F // M
    if rng_seq is None:
        rng_seq = np.random.SeedSequence(0xD0)
    seqs = rng_seq.spawn(U)

    m_tab = np.zeros((U, B), dtype=complex)
    v_tab = np.zeros((U, B))
    z_tab = np.zeros((U, B))
    acc_d = np.empty(U)
    acc_f = np.empty(U)
    for u in range(U):
        ker = kernel(priors[u], noise)
        rng = np.random.default_rng(seqs[u])
        zh = complex_normal(rng, (mc, F))
        zn = complex_normal(rng, (mc, F))
        if not priors[u].diagonal:
            raise ValueError("moment tables need the matched diagonal model")
        h = zh * np.sqrt(np.real(priors[u].sigma))
        phi = zn * noise.sqrt()
        nu_log = thresholds[u]

        r = h + phi
        in_d = ker.log_lr(r, prior_odds=False) <= nu_log
        acc_d[u] = in_d.mean()
        if acc_d[u] < MIN_ACCEPT_RATE and in_d.sum() < MIN_ACCEPT_COUNT:
            raise InsufficientSamplesError(f"D_{u} acceptance {acc_d[u]:.2e}")
        eta = ker.mean(r[in_d])
        hb = h[in_d].reshape(-1, B, M)
        eb = eta.reshape(-1, B, M)
        s = np.einsum("nbm,nbm->nb", hb, eb.conj())
        m_tab[u] = s.mean(axis=0)
        v_tab[u] = (np.abs(s) ** 2).mean(axis=0) - np.abs(m_tab[u]) ** 2
        e_d = (np.abs(eb) ** 2).sum(axis=2).mean(axis=0)

        lam = priors[u].lam
        fa_weight = (1.0 / lam - 1.0) * p_fa[u]
        if mc * p_fa[u] >= MIN_ACCEPT_COUNT:
            in_f = ker.log_lr(phi, prior_odds=False) < nu_log
            acc_f[u] = in_f.mean()
            if acc_f[u] < MIN_ACCEPT_RATE and in_f.sum() < MIN_ACCEPT_COUNT:
                raise InsufficientSamplesError(f"F_{u} acceptance {acc_f[u]:.2e}")
            eta0 = ker.mean(phi[in_f]).reshape(-1, B, M)
            e_f = (np.abs(eta0) ** 2).sum(axis=2).mean(axis=0)
        else:
            # the false-alarm event is too rare to sample; its weighted
            # contribution is bounded by Cauchy-Schwarz,
            # P_fa E[X | F] <= sqrt(E[X^2] P_fa), and dropped when provably
            # negligible against the detected-energy term
            acc_f[u] = np.nan
            x2 = (np.abs(ker.mean(phi).reshape(-1, B, M)) ** 2).sum(axis=2)
            bound = (1.0 / lam - 1.0) * np.sqrt((x2 ** 2).mean(axis=0) * p_fa[u])
            ref = (1.0 - p_md[u]) * e_d
            if np.any(bound > 1e-6 * np.maximum(ref, 1e-300)) and ref.sum() > 0:
                raise InsufficientSamplesError(
                    f"F_{u}: expected {mc * p_fa[u]:.1f} accepted draws; "
                    f"contribution bound not negligible")
            e_f = np.zeros(B)
            fa_weight = 0.0
        z_tab[u] = (1.0 - p_md[u]) * e_d + fa_weight * e_f

    return MomentTables(m=m_tab, v=v_tab, z=z_tab,
                        p_md=np.asarray(p_md, dtype=float),
                        p_fa=np.asarray(p_fa, dtype=float),
                        accept_d=acc_d, accept_f=acc_f)


def dl_power_normalization(z_tab, lam, alpha, coverage, L):
    """rho_DL balancing total DL ACK power with total uplink access power:
    rho = (1/L) sum_u lam_u alpha_u / sum_b sum_{u in S_b} lam_u alpha_u Z_{u,b}."""
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    denom = 0.0
    for b, users in enumerate(coverage):
        if users.size:
            denom += float(np.sum(lam[users] * alpha[users] * z_tab[users, b]))
    if denom <= 0:
        raise ValueError("no detectable transmit energy: rho_DL undefined")
    return float(np.sum(lam * alpha)) / (L * denom)


def mean_tx_power(z_tab, lam, alpha, coverage, L, rho_dl):
    """Average per-RU ACK transmit power rho * sum_{u in S_b} lam_u N_u Z_{u,b}."""
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    out = np.zeros(len(coverage))
    for b, users in enumerate(coverage):
        if users.size:
            out[b] = rho_dl * L * float(np.sum(lam[users] * alpha[users] * z_tab[users, b]))
    return out


def uatf_rates(geometry, clusters, tables, rho_dl, sigma_w2, L, lam, alpha, M):
    """Per-location UatF rate and its genie-aided counterpart, bits/symbol."""
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    U = geometry.U
    g = geometry.g
    rates = np.empty(U)
    rates_genie = np.empty(U)
    signal = np.empty(U)
    interference = np.empty(U)
    for u in range(U):
        cl = clusters.clusters[u]
        sig = np.abs(tables.m[u, cl].sum()) ** 2
        var = tables.v[u, cl].sum().real
        interf = 0.0
        interf_genie = 0.0
        for u2 in range(U):
            cl2 = clusters.clusters[u2]
            w = lam[u2] * alpha[u2]
            interf += w * float(np.sum(g[u, cl2] * tables.z[u2, cl2]))
            interf_genie += w * float(np.sum(g[u, cl2] * M * g[u2, cl2]))
        denom = sigma_w2 / rho_dl + var + L * interf
        rates[u] = np.log1p(sig / denom) / LN2
        sig_g = M ** 2 * g[u, cl].sum() ** 2
        # gain-fluctuation variance of sum_b ||h_b||^2 is M sum_b g^2
        # (each ||h_b||^2 is g * chi^2; the linear-in-g form would not be
        # dominated by the perfect-CSI bound)
        denom_g = sigma_w2 / rho_dl + M * (g[u, cl] ** 2).sum() + L * interf_genie
        rates_genie[u] = np.log1p(sig_g / denom_g) / LN2
        signal[u] = sig
        interference[u] = L * interf
    return RateReport(rate_uatf_bits=rates, rate_genie_bits=rates_genie,
                      rho_dl=float(rho_dl), signal=signal,
                      interference=interference, sigma_w2=sigma_w2)


def rate_cdf(rates, lam, n_codewords):
    """Staircase CDF over the active-user population.

    Returns (sorted rates, cumulative weights); the jump for location u has
    amplitude lam_u N_u / sum_u' lam_u' N_u'.
    """
    rates = np.asarray(rates, dtype=float)
    w = np.asarray(lam, dtype=float) * np.asarray(n_codewords, dtype=float)
    w = w / w.sum()
    order = np.argsort(rates, kind="stable")
    return rates[order], np.cumsum(w[order])


def median_rate(rates, lam, n_codewords):
    """Weighted median from the staircase CDF."""
    xs, cw = rate_cdf(rates, lam, n_codewords)
    idx = int(np.searchsorted(cw, 0.5))
    return float(xs[min(idx, xs.size - 1)])
