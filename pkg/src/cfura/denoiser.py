"""Bernoulli-Gaussian posterior-mean denoiser.

For a row observation r = a*h + phi with a ~ Bern(lambda), h ~ CN(0, Sigma)
and phi ~ CN(0, C), the posterior mean is

    eta(r) = r (Sigma+C)^-1 Sigma / (1 + Lambda_map(r)),

where Lambda_map is the prior-weighted likelihood ratio of "inactive" vs
"active".  All likelihood arithmetic is done in the log domain: the textbook
product form overflows for large ||r||, the log form never does.

Sigma and C may be given as 1-D arrays (diagonal entries, the matched model)
or as dense Hermitian matrices; the diagonal path reduces to per-entry scalar
arithmetic, the dense path goes through Cholesky factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass
class PriorParams:
    """Activity probability and channel covariance of one location."""

    lam: float
    sigma: np.ndarray    # (F,) diagonal entries or (F, F) Hermitian PSD

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma)
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must lie in (0, 1]; lam = 0 leaves the "
                             "denoiser identically zero and detection undefined")
        if self.sigma.ndim == 1:
            if np.any(self.sigma.real < 0):
                raise ValueError("diagonal sigma must be non-negative")
        elif self.sigma.ndim != 2 or self.sigma.shape[0] != self.sigma.shape[1]:
            raise ValueError("sigma must be a vector of diagonal entries or a square matrix")

    @property
    def diagonal(self):
        return self.sigma.ndim == 1


@dataclass
class EffectiveNoise:
    """Effective-noise covariance C of the decoupled observation model."""

    c: np.ndarray        # (F,) diagonal entries or (F, F) Hermitian PD

    def __post_init__(self):
        self.c = np.asarray(self.c)
        if self.c.ndim == 1:
            if np.any(self.c.real <= 0):
                raise np.linalg.LinAlgError("diagonal C must be strictly positive")
        elif self.c.ndim != 2 or self.c.shape[0] != self.c.shape[1]:
            raise ValueError("c must be a vector of diagonal entries or a square matrix")

    @classmethod
    def from_tau(cls, tau, M):
        """Per-RU scalars tau_b repeated M times: C = diag(tau) kron I_M."""
        return cls(np.repeat(np.asarray(tau, dtype=float), M))

    @property
    def diagonal(self):
        return self.c.ndim == 1

    @property
    def F(self):
        return self.c.shape[0]

    def tau(self, M):
        """Recover per-RU scalars from the M-fold repeated diagonal."""
        d = np.real(self.c if self.diagonal else np.diag(self.c))
        return d.reshape(-1, M).mean(axis=1)

    def diag(self):
        return np.real(self.c if self.diagonal else np.diag(self.c))

    def sqrt(self):
        """Matrix square root, for sampling CN(0, C) as z @ C^{1/2}."""
        if self.diagonal:
            return np.sqrt(self.c.real)
        w, v = np.linalg.eigh(self.c)
        if np.any(w <= 0):
            raise np.linalg.LinAlgError("C is not positive definite")
        return (v * np.sqrt(w)) @ v.conj().T


def _sigmoid(x):
    """Branch-split logistic function, stable for any magnitude."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class _Kernel:
    """Precomputed pieces shared by the likelihood ratio, the mean and the
    Jacobian for one (prior, noise) pair."""

    def __init__(self, prior: PriorParams, noise: EffectiveNoise):
        self.lam = prior.lam
        # ln((1-lam)/lam); -inf at lam = 1 realizes the linear-MMSE limit
        with np.errstate(divide="ignore"):
            self.log_prior_odds = float(np.log(1.0 - self.lam) - np.log(self.lam))
        self.diagonal = prior.diagonal and noise.diagonal
        if self.diagonal:
            sig = np.real(prior.sigma).astype(float)
            c = np.real(noise.c).astype(float)
            self.gain = sig / (sig + c)                 # (Sigma+C)^-1 Sigma
            self.quad_w = self.gain / c                 # C^-1 - (Sigma+C)^-1
            self.logdet_ratio = float(np.sum(np.log1p(sig / c)))
            self.inv_c = 1.0 / c
        else:
            sig = prior.sigma if prior.sigma.ndim == 2 else np.diag(prior.sigma.astype(complex))
            c = noise.c if noise.c.ndim == 2 else np.diag(noise.c.astype(complex))
            cho_c = scipy.linalg.cho_factor(c)
            cho_sc = scipy.linalg.cho_factor(sig + c)
            eye = np.eye(c.shape[0], dtype=complex)
            self.inv_c_mat = scipy.linalg.cho_solve(cho_c, eye)
            inv_sc = scipy.linalg.cho_solve(cho_sc, eye)
            self.gain = inv_sc @ sig                    # (Sigma+C)^-1 Sigma
            self.quad_w = self.inv_c_mat - inv_sc
            self.logdet_ratio = float(
                2.0 * (np.sum(np.log(np.diag(cho_sc[0]).real))
                       - np.sum(np.log(np.diag(cho_c[0]).real))))

    def active_mean(self, r):
        """E[h | r, a=1] = r (Sigma+C)^-1 Sigma, row-wise."""
        if self.diagonal:
            return r * self.gain
        return r @ self.gain

    def quad_form(self, r):
        """r (C^-1 - (Sigma+C)^-1) r^H, row-wise, real and >= 0."""
        if self.diagonal:
            return (np.abs(r) ** 2 * self.quad_w).sum(axis=-1)
        return np.einsum("...i,ij,...j->...", r, self.quad_w, r.conj()).real

    def log_lr(self, r, prior_odds=True):
        """ln Lambda(r); with prior_odds=False this is the Neyman-Pearson
        statistic ln(|Sigma+C|/|C|) - r(C^-1 - (Sigma+C)^-1)r^H."""
        out = self.logdet_ratio - self.quad_form(r)
        return out + self.log_prior_odds if prior_odds else out

    def activity_posterior(self, r):
        """P(a=1 | r) = 1 / (1 + Lambda_map(r))."""
        return _sigmoid(-self.log_lr(r))

    def mean(self, r):
        return self.active_mean(r) * self.activity_posterior(r)[..., None]

    def jacobian(self, r):
        """Wirtinger Jacobian [eta'(r)]_{ij} = d[eta(r)]_j / d r_i, row-wise.

        eta'(r) = (Sigma+C)^-1 Sigma * p + p(1-p) C^-1 m^H m with p the
        activity posterior and m the active-branch mean; the p(1-p) form
        keeps the product finite where Lambda_map overflows.
        """
        r2 = np.atleast_2d(r)
        p = self.activity_posterior(r2)
        w = p * (1.0 - p)
        m = self.active_mean(r2)
        if self.diagonal:
            base = p[:, None, None] * np.diag(self.gain)[None]
            rank1 = np.einsum("n,ni,nj->nij", w, m.conj() * self.inv_c, m)
        else:
            base = p[:, None, None] * self.gain[None]
            rank1 = np.einsum("n,ni,nj->nij", w, m.conj() @ self.inv_c_mat.T, m)
        out = base + rank1
        return out[0] if np.ndim(r) == 1 else out

    def mean_jacobian(self, r):
        """(1/N) sum_n eta'(r_n) without materializing N Jacobians."""
        r2 = np.atleast_2d(r)
        p = self.activity_posterior(r2)
        w = p * (1.0 - p)
        m = self.active_mean(r2)
        n = r2.shape[0]
        if self.diagonal:
            base = p.mean() * np.diag(self.gain)
            rank1 = np.einsum("n,ni,nj->ij", w, m.conj() * self.inv_c, m) / n
        else:
            base = p.mean() * self.gain
            rank1 = np.einsum("n,ni,nj->ij", w, m.conj() @ self.inv_c_mat.T, m) / n
        return base + rank1


_KERNEL_CACHE_SIZE = 64
_kernel_cache: dict = {}


def kernel(prior, noise):
    """Memoized _Kernel; the AMP and SE loops reuse one pair many times."""
    key = (prior.lam, prior.sigma.shape, prior.sigma.tobytes(),
           noise.c.shape, noise.c.tobytes())
    hit = _kernel_cache.get(key)
    if hit is None:
        if len(_kernel_cache) >= _KERNEL_CACHE_SIZE:
            _kernel_cache.clear()
        hit = _Kernel(prior, noise)
        _kernel_cache[key] = hit
    return hit


def log_likelihood_ratio(r, prior, noise, prior_odds=True):
    """ln Lambda_map(r) (or ln Lambda(r) without the prior-odds term)."""
    r = np.asarray(r)
    out = kernel(prior, noise).log_lr(np.atleast_2d(r), prior_odds=prior_odds)
    return float(out[0]) if r.ndim == 1 else out


def posterior_mean(r, prior, noise):
    """eta(r) = E[a h | r], applied row-wise to 1-D or 2-D input."""
    r = np.asarray(r)
    out = kernel(prior, noise).mean(np.atleast_2d(r))
    return out[0] if r.ndim == 1 else out


def jacobian(r, prior, noise):
    """eta'(r), one F x F matrix per row of r."""
    return kernel(prior, noise).jacobian(np.asarray(r))
