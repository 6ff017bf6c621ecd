"""Neyman-Pearson message detection and its error probabilities.

A message row is declared active when the prior-free log likelihood ratio
ln Lambda_u(r) falls below the threshold ln nu_u.  Under both hypotheses the
statistic is a Hermitian quadratic form of a Gaussian vector, so the
misdetection and false-alarm probabilities reduce to the CDF

    P(gamma) = P(z D z^H <= gamma),   z ~ CN(0, I_F),  D = diag(d) >= 0,

computed by Laplace inversion of prod_f (1 + d_f s)^-1 / s on a vertical
contour through the Chernoff-optimal abscissa, discretized with a
Gauss-Chebyshev quadrature.  The Chernoff bound itself doubles as a cheap
sanity check: it must dominate the exact CDF everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special

from .denoiser import kernel

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class DetectorSpec:
    """Quadratic-form formulation of one location's activity test."""

    nu_log: float
    d_h0: np.ndarray     # eigenvalues of the test matrix under H0
    d_h1: np.ndarray     # under H1
    gamma: float         # threshold on the quadratic form


@dataclass
class DetectionReport:
    decisions: list                 # U binary vectors
    p_md: np.ndarray                # theory, per location
    p_fa: np.ndarray
    thresholds: np.ndarray          # ln nu_u
    md_empirical: np.ndarray | None = None
    fa_empirical: np.ndarray | None = None
    n_active: np.ndarray | None = None
    n_inactive: np.ndarray | None = None


def _golden_min(fn, lo, hi, iters=120):
    """Golden-section minimizer of a unimodal scalar function on [lo, hi]."""
    a, b = float(lo), float(hi)
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fn(x2)
    return 0.5 * (a + b)


def _log_mgf_exp(d, gamma, c):
    """ln [ L_p(c) e^{gamma c} ] on the real line (c > -1/max d)."""
    return gamma * c - np.sum(np.log1p(d * c))


def _chernoff_point(d, gamma):
    """Abscissa minimizing L_p(c) e^{gamma c} over c >= 0 (0 if vacuous)."""
    if gamma >= d.sum():
        return 0.0
    c_max = d.size / gamma
    return _golden_min(lambda c: _log_mgf_exp(d, gamma, c), 0.0, c_max)


def _chernoff_point_upper(d, gamma):
    """Abscissa a > 0 minimizing the upper-tail exponent
    -gamma a - sum ln(1 - d_f a) over (0, 1/max d) (0 if vacuous)."""
    if gamma <= d.sum():
        return 0.0
    a_max = (1.0 - 1e-9) / d.max()
    return _golden_min(lambda a: _log_mgf_exp(-d, -gamma, a), 0.0, a_max)


def chernoff_bound(d, gamma):
    """min_{c >= 0} e^{gamma c} prod_f (1 + d_f c)^-1, clamped to [0, 1]."""
    d = _check_d(d)
    d = d[d > 0]
    if d.size == 0:
        return 1.0 if gamma >= 0 else 0.0
    if gamma <= 0:
        # P(Q <= gamma) = 0 and the bound's infimum over c is 0 as well
        return 0.0
    c_star = _chernoff_point(d, gamma)
    return float(min(1.0, np.exp(_log_mgf_exp(d, gamma, c_star))))


def _check_d(d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("quadratic-form eigenvalues must be non-negative")
    return d


def _laurent_tail(d, n_terms):
    """Coefficients a_m of L_p(s) = sum_{m >= F} a_m s^-m at s -> infinity.

    With w = 1/s:  prod_f w/(w + d_f) = w^F / prod(d) * prod_f 1/(1 + w/d_f),
    so the a's follow from convolving truncated geometric series in w.
    """
    poly = np.zeros(n_terms)
    poly[0] = 1.0 / np.prod(d)
    for df in d:
        geo = (-1.0 / df) ** np.arange(n_terms)
        poly = np.convolve(poly, geo)[:n_terms]
    return poly            # a_{F + j} = poly[j]


def _tail_subtraction(d, gamma, c, target_order=12, cap=1e5):
    """Closed-form inverse of as many Laurent tail terms as stay
    well-conditioned; returns (closed_value, coefficients kept).

    Each kept term a_m s^-m contributes a_m gamma^m / m! to the CDF and is
    removed from the quadrature integrand, raising its decay order by one.
    `d` and `gamma` may be the negated upper-tail parameters.  Terms are
    dropped as soon as either the contour evaluation |a_m| c^-m or the
    closed-form contribution would exceed `cap`, which is exactly the
    regime (c below the Laurent convergence radius) where the subtraction
    loses more precision than it buys; the raw quadrature already converges
    fast there because F is large.
    """
    F = d.size
    k_max = max(0, target_order - F)
    if k_max == 0:
        return 0.0, np.empty(0)
    coeffs = _laurent_tail(d, k_max)
    closed = 0.0
    kept = []
    log_abs_gamma = np.log(abs(gamma))
    for j, a in enumerate(coeffs):
        m = F + j
        if a == 0.0:
            kept.append(a)
            continue
        log_term = np.log(abs(a)) + m * log_abs_gamma - scipy.special.gammaln(m + 1)
        log_eval = np.log(abs(a)) - m * np.log(c)
        if log_term > np.log(cap) or log_eval > np.log(cap):
            break
        if gamma > 0:
            closed += np.sign(a) * np.exp(log_term)
        # gamma < 0 (upper-tail form): s^-(m+1) e^{gamma s} has no
        # singularity right of the contour, so the inverted term is 0;
        # the coefficient is still subtracted from the integrand.
        kept.append(a)
    return closed, np.asarray(kept)


def _quadrature(d, gamma, c, v, tail=None):
    """Gauss-Chebyshev sum over the vertical contour through c; `tail`
    holds Laurent coefficients already inverted in closed form, which are
    subtracted from L_p before exponent weighting."""
    n = np.arange(1, v // 2 + 1)
    tau = np.tan((2 * n - 1) * np.pi / (2 * v))
    s = c * (1.0 + 1j * tau)
    log_lp = -np.log1p(np.multiply.outer(s, d)).sum(axis=1)
    if tail is not None and tail.size:
        F = d.size
        powers = s[:, None] ** -(F + np.arange(tail.size))[None, :]
        vals = (np.exp(log_lp) - powers @ tail) * np.exp(gamma * s)
    else:
        vals = np.exp(log_lp + gamma * s)
    return float(np.sum(vals.real + tau * vals.imag) / v)


def _invert(d, gamma, c, nodes, tol, max_nodes):
    """Adaptive-node inversion at abscissa c; returns (value, converged,
    last successive difference)."""
    closed, tail = _tail_subtraction(d, gamma, c)
    v = int(nodes)
    est = _quadrature(d, gamma, c, v, tail)
    diff = np.inf
    while v < max_nodes:
        v *= 2
        nxt = _quadrature(d, gamma, c, v, tail)
        diff = abs(nxt - est)
        est = nxt
        if diff < tol:
            return closed + est, True, diff
    return closed + est, False, diff


def _budget_abscissa(d, gamma, c_ref, c_limit, budget=9.0):
    """Largest abscissa <= c_limit whose contour-peak magnitude exceeds the
    one at c_ref by at most `budget` nats (the integrand magnitude governs
    cancellation, so this caps the precision given up for tail coverage)."""
    h_cap = _log_mgf_exp(d, gamma, c_ref) + budget
    if _log_mgf_exp(d, gamma, c_limit) <= h_cap:
        return c_limit
    lo, hi = c_ref, c_limit
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _log_mgf_exp(d, gamma, mid) <= h_cap:
            lo = mid
        else:
            hi = mid
    return lo


def _invert_best(d, gamma, c_ref, c_limit, nodes, tol, max_nodes):
    """Try the reference abscissa first, then a coverage-driven one further
    from the poles; the adaptive node check arbitrates."""
    candidates = [c_ref]
    c_cov = min(2.0 / np.abs(d).min(), c_limit)
    if c_cov > 2.0 * c_ref:
        candidates.append(_budget_abscissa(d, gamma, c_ref, c_cov))
    best, best_diff = None, np.inf
    for c in candidates:
        val, ok, diff = _invert(d, gamma, c, nodes, tol, max_nodes)
        if ok:
            return val
        if best is None or diff < best_diff:
            best, best_diff = val, diff
    return best


def quadratic_form_cdf(d, gamma, nodes=2048, tol=1e-10, max_nodes=1 << 17):
    """P(z D z^H <= gamma) for z ~ CN(0, I), D = diag(d) PSD.

    Below the mean sum(d) the CDF is inverted directly on a contour through
    the lower-tail Chernoff point; above it, the complement P(Q > gamma) is
    inverted through the upper-tail Chernoff point (same quadrature with
    negated d and gamma), which keeps the integrand bounded by the relevant
    Chernoff bound on both sides.  The slowly-decaying Laurent tail of the
    transform is inverted in closed form so the remainder decays at least
    like |s|^-12 where that is well-conditioned, and the node count doubles
    until two successive quadratures agree within tol.
    """
    d = _check_d(d)
    gamma = float(gamma)
    d = d[d > 0]
    if d.size == 0:
        # the quadratic form is identically zero
        return 1.0 if gamma >= 0 else 0.0
    if gamma <= 0:
        return 0.0
    if nodes < 32 or nodes % 2:
        raise ValueError("nodes must be even and >= 32")

    c_floor = 0.05 / d.max()
    if gamma <= d.sum():
        c_ref = max(_chernoff_point(d, gamma), c_floor)
        est = _invert_best(d, gamma, c_ref, np.inf, nodes, tol, max_nodes)
    else:
        a_ref = min(max(_chernoff_point_upper(d, gamma), c_floor), 0.95 / d.max())
        est = 1.0 - _invert_best(-d, -gamma, a_ref, 0.95 / d.max(),
                                 nodes, tol, max_nodes)
    return float(min(1.0, max(0.0, est)))


def quadratic_form_sf(d, gamma, nodes=2048, tol=1e-10, max_nodes=1 << 17):
    """P(z D z^H > gamma), computed directly on the upper-tail contour when
    gamma exceeds the mean so that tiny tail probabilities keep full
    relative precision (1 - cdf would round to zero below 1e-16)."""
    d = _check_d(d)
    gamma = float(gamma)
    d = d[d > 0]
    if d.size == 0:
        return 0.0 if gamma >= 0 else 1.0
    if gamma <= 0:
        return 1.0
    c_floor = 0.05 / d.max()
    if gamma <= d.sum():
        c_ref = max(_chernoff_point(d, gamma), c_floor)
        est = 1.0 - _invert_best(d, gamma, c_ref, np.inf, nodes, tol, max_nodes)
    else:
        a_ref = min(max(_chernoff_point_upper(d, gamma), c_floor), 0.95 / d.max())
        est = _invert_best(-d, -gamma, a_ref, 0.95 / d.max(), nodes, tol, max_nodes)
    return float(min(1.0, max(0.0, est)))


def detector_spec(prior, noise, nu_log):
    """Quadratic-form test data for one location at threshold ln nu.

    Matched diagonal model: d_h0 = g/(tau+g), d_h1 = g/tau entrywise on the
    F-dimensional diagonal (each RU value appearing M times), and
    gamma = sum_f ln(1 + g_f/tau_f) - ln nu.  Non-diagonal inputs fall back
    to the eigenvalues of the whitened test matrices, which is still exact.
    """
    ker = kernel(prior, noise)
    if ker.diagonal:
        sig = np.real(prior.sigma).astype(float)
        c = np.real(noise.c).astype(float)
        d_h1 = sig / c
        d_h0 = sig / (c + sig)
    else:
        b = ker.quad_w
        sqc = noise.sqrt()
        d_h0 = np.linalg.eigvalsh(sqc @ b @ sqc.conj().T).real
        sig = prior.sigma if prior.sigma.ndim == 2 else np.diag(prior.sigma.astype(complex))
        w, vv = np.linalg.eigh(sig + (np.diag(noise.c) if noise.diagonal else noise.c))
        sq1 = (vv * np.sqrt(np.clip(w, 0, None))) @ vv.conj().T
        d_h1 = np.linalg.eigvalsh(sq1 @ b @ sq1.conj().T).real
        d_h0 = np.clip(d_h0, 0.0, None)
        d_h1 = np.clip(d_h1, 0.0, None)
    gamma = ker.logdet_ratio - nu_log
    return DetectorSpec(nu_log=float(nu_log), d_h0=d_h0, d_h1=d_h1, gamma=float(gamma))


def md_fa_probabilities(prior, noise, nu_log, nodes=2048):
    """Asymptotic (P_md, P_fa) of the threshold test at ln nu = nu_log.

    P_md = P(quadform_H1 < gamma), P_fa = P(quadform_H0 > gamma): an active
    row is missed when its statistic stays below the threshold, an inactive
    row alarms when it crosses it.
    """
    spec = detector_spec(prior, noise, nu_log)
    p_md = quadratic_form_cdf(spec.d_h1, spec.gamma, nodes=nodes)
    p_fa = quadratic_form_sf(spec.d_h0, spec.gamma, nodes=nodes)
    return p_md, p_fa


def _bisect(fn, lo, hi, x_tol=1e-12, f_tol=0.0, max_iter=200):
    """Bisection for a decreasing function with fn(lo) > 0 > fn(hi)."""
    f_lo, f_hi = fn(lo), fn(hi)
    expand = 0
    while f_lo < 0 and expand < 60:
        hi, f_hi = lo, f_lo
        lo = lo - max(1.0, abs(lo))
        f_lo = fn(lo)
        expand += 1
    expand = 0
    while f_hi > 0 and expand < 60:
        lo, f_lo = hi, f_hi
        hi = hi + max(1.0, abs(hi))
        f_hi = fn(hi)
        expand += 1
    if f_lo < 0 or f_hi > 0:
        raise ValueError("could not bracket the calibration target")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if abs(f_mid) <= f_tol or hi - lo < x_tol:
            return mid
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_threshold(prior, noise, mode="equal_error", target=None, nodes=2048):
    """Solve for ln nu.

    equal_error: P_md(nu) = P_fa(nu) to within 1e-6 (P_md falls and P_fa
    rises with nu, so their difference is monotone).  target_fa: P_fa(nu) =
    target to 1e-8 relative.
    """
    if mode == "equal_error":
        # equalize in the log domain: the absolute difference criterion is
        # vacuous when both probabilities are far below 1e-6
        def f(nu_log):
            p_md, p_fa = md_fa_probabilities(prior, noise, nu_log, nodes=nodes)
            return np.log(max(p_md, 1e-300)) - np.log(max(p_fa, 1e-300))
        nu = _bisect(f, -1.0, 1.0, f_tol=1e-6)
        p_md, p_fa = md_fa_probabilities(prior, noise, nu, nodes=nodes)
        if abs(p_md - p_fa) >= 1e-6:
            raise ArithmeticError("equal-error calibration did not converge")
        return nu
    if mode == "target_fa":
        if target is None or not 0.0 < target < 1.0:
            raise ValueError("target_fa mode needs a target in (0, 1)")
        def f(nu_log):
            _, p_fa = md_fa_probabilities(prior, noise, nu_log, nodes=nodes)
            return target - p_fa        # decreasing in nu_log
        nu = _bisect(f, -1.0, 1.0, f_tol=1e-9 * target)
        _, p_fa = md_fa_probabilities(prior, noise, nu, nodes=nodes)
        if abs(p_fa - target) >= 1e-8 * max(target, 1e-300) + 1e-15:
            raise ArithmeticError("target-FA calibration did not converge")
        return nu
    raise ValueError(f"unknown calibration mode {mode!r}")


def detect(r_final, priors, noise, thresholds, activity=None, nodes=2048):
    """Apply the threshold test to the AMP outputs R_u^(T).

    a_hat = 1 iff ln Lambda_u(r) < ln nu_u, with the prior-odds-free ratio
    (the odds factor is absorbable into nu).  When ground-truth activity is
    supplied, per-location empirical MD/FA rates are included.
    """
    U = len(r_final)
    thresholds = np.asarray(thresholds, dtype=float)
    decisions = []
    p_md = np.empty(U)
    p_fa = np.empty(U)
    for u in range(U):
        llr = kernel(priors[u], noise).log_lr(r_final[u], prior_odds=False)
        decisions.append((llr < thresholds[u]).astype(np.int8))
        p_md[u], p_fa[u] = md_fa_probabilities(priors[u], noise, thresholds[u],
                                               nodes=nodes)
    report = DetectionReport(decisions=decisions, p_md=p_md, p_fa=p_fa,
                             thresholds=thresholds)
    if activity is not None:
        md_e = np.empty(U)
        fa_e = np.empty(U)
        n_act = np.empty(U, dtype=int)
        n_ina = np.empty(U, dtype=int)
        for u in range(U):
            act = activity[u].astype(bool)
            dec = decisions[u].astype(bool)
            n_act[u] = act.sum()
            n_ina[u] = (~act).sum()
            md_e[u] = np.nan if n_act[u] == 0 else (act & ~dec).sum() / n_act[u]
            fa_e[u] = np.nan if n_ina[u] == 0 else (~act & dec).sum() / n_ina[u]
        report.md_empirical = md_e
        report.fa_empirical = fa_e
        report.n_active = n_act
        report.n_inactive = n_ina
    return report
