"""Command-line front end.

    cfura se       --config PATH [--out DIR]      SE trace / fixed point only
    cfura simulate --config PATH [--trials N]     full pipeline
    cfura roc      --config PATH                  detection tradeoff sweep
    cfura rates    --config PATH                  downlink evaluation
    cfura genie    --config PATH                  genie baseline only

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment config file")
    sub.add_argument("--seed", type=int, default=None, help="override master seed")
    sub.add_argument("--trials", type=int, default=None, help="override trial count")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--threads", type=int, default=None,
                     help="concurrent trials (default: CFURA_THREADS or 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="cfura", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("se", "state-evolution trace and fixed point"),
                        ("simulate", "full Monte Carlo pipeline"),
                        ("roc", "detection tradeoff sweep over thresholds"),
                        ("rates", "downlink UatF rates from cached moments"),
                        ("genie", "genie-aided MMSE baseline")):
        _add_common(subs.add_parser(name, help=help_))
    return parser


def _load(args):
    from .experiment import load_config
    return load_config(args.config, seed=args.seed, trials=args.trials,
                       out=args.out, threads=args.threads)


def cmd_se(exp):
    from .experiment import compute_se, write_csv
    os.makedirs(exp.out, exist_ok=True)
    tau, mmse_tr = compute_se(exp, cache_dir=exp.out)
    sysc = exp.system
    rows = [(t + 1, *tau[t], *mmse_tr[t]) for t in range(tau.shape[0])]
    write_csv(os.path.join(exp.out, "se_trace.csv"),
              ["t"] + [f"tau_{b + 1}" for b in range(sysc.B)]
              + [f"mmse_tr_{u + 1}" for u in range(sysc.U)], rows)
    mse = tau.sum(axis=1) * sysc.M - sysc.F * sysc.sigma_w2
    print(f"se: T={tau.shape[0]} iterations, predicted MSE "
          f"{mse[0]:.6g} -> {mse[-1]:.6g}")
    print(f"se: wrote {os.path.join(exp.out, 'se_trace.csv')}")
    return 0


def cmd_simulate(exp):
    from .experiment import run_experiment
    result = run_experiment(exp)
    print(f"simulate: {exp.trials} trials in {exp.out}")
    print(f"simulate: equal-error scale p_md mean {result.p_md.mean():.3e}, "
          f"p_fa mean {result.p_fa.mean():.3e}")
    print(f"simulate: median UatF rate {result.median_uatf:.4f} bit/symbol "
          f"(genie {result.median_genie:.4f})")
    return 0


def cmd_roc(exp):
    from .denoiser import EffectiveNoise
    from .detection import calibrate_threshold, md_fa_probabilities
    from .experiment import ROC_GRID_OFFSETS, compute_se, write_csv
    from .model import make_priors
    os.makedirs(exp.out, exist_ok=True)
    sysc = exp.system
    priors = make_priors(sysc, exp.geometry)
    tau, _ = compute_se(exp, cache_dir=exp.out)
    c_fin = EffectiveNoise.from_tau(tau[-1], sysc.M)
    rows = []
    for u in range(sysc.U):
        nu0 = calibrate_threshold(priors[u], c_fin, mode=exp.detection_mode,
                                  target=exp.target_fa)
        for off in ROC_GRID_OFFSETS:
            pm, pf = md_fa_probabilities(priors[u], c_fin, nu0 + off)
            rows.append((u, nu0 + off, pm, pf, float("nan"), float("nan")))
    write_csv(os.path.join(exp.out, "roc.csv"),
              ["location", "nu_log", "p_md_theory", "p_fa_theory",
               "p_md_empirical", "p_fa_empirical"], rows)
    print(f"roc: wrote {os.path.join(exp.out, 'roc.csv')} "
          f"({sysc.U} locations x {ROC_GRID_OFFSETS.size} thresholds)")
    return 0


def cmd_rates(exp):
    from .denoiser import EffectiveNoise
    from .detection import calibrate_threshold, md_fa_probabilities
    from .downlink import (dl_conditional_moments, dl_power_normalization,
                           form_clusters, median_rate, uatf_rates)
    from .experiment import compute_se, write_csv
    from .model import make_priors
    from .rng import StreamFactory
    os.makedirs(exp.out, exist_ok=True)
    sysc = exp.system
    priors = make_priors(sysc, exp.geometry)
    alpha_eff = sysc.n_codewords / sysc.L
    tau, _ = compute_se(exp, cache_dir=exp.out)
    c_fin = EffectiveNoise.from_tau(tau[-1], sysc.M)
    thresholds = np.array([
        calibrate_threshold(priors[u], c_fin, mode=exp.detection_mode,
                            target=exp.target_fa) for u in range(sysc.U)])
    p = np.array([md_fa_probabilities(priors[u], c_fin, thresholds[u])
                  for u in range(sysc.U)])
    factory = StreamFactory(sysc.seed)
    tables = dl_conditional_moments(priors, c_fin, thresholds, p[:, 0], p[:, 1],
                                    sysc.M, mc=sysc.mc_cond,
                                    rng_seq=factory._seq["cond"].spawn(2)[1])
    clusters = form_clusters(exp.geometry, exp.q)
    rho = dl_power_normalization(tables.z, sysc.lam, alpha_eff,
                                 clusters.coverage, sysc.L)
    rates = uatf_rates(exp.geometry, clusters, tables, rho, sysc.sigma_w2,
                       sysc.L, sysc.lam, alpha_eff, sysc.M)
    weights = sysc.lam * sysc.n_codewords
    weights = weights / weights.sum()
    rows = [(u, rates.rate_uatf_bits[u], rates.rate_genie_bits[u], weights[u])
            for u in range(sysc.U)]
    write_csv(os.path.join(exp.out, "rates_cdf.csv"),
              ["location", "rate_uatf_bits", "rate_genie_bits", "cdf_weight"], rows)
    med = median_rate(rates.rate_uatf_bits, sysc.lam, sysc.n_codewords)
    print(f"rates: rho_dl = {rho:.6g}, median UatF {med:.4f} bit/symbol")
    print(f"rates: wrote {os.path.join(exp.out, 'rates_cdf.csv')}")
    return 0


def cmd_genie(exp):
    from .estimation import genie_asymptotic_fixed_point
    from .experiment import write_csv
    os.makedirs(exp.out, exist_ok=True)
    sysc = exp.system
    alpha_eff = sysc.n_codewords / sysc.L
    c_star = np.array([genie_asymptotic_fixed_point(
        exp.geometry, sysc.lam, alpha_eff, sysc.sigma_w2, b)
        for b in range(sysc.B)])
    rows = []
    for u in range(sysc.U):
        g = exp.geometry.g[u]
        mse = float(np.mean(g / (1.0 + g / c_star)))
        rows.append((u, mse))
    write_csv(os.path.join(exp.out, "genie.csv"),
              ["location", "mse_genie_asymptotic"], rows)
    write_csv(os.path.join(exp.out, "genie_fixed_point.csv"),
              ["ru", "c_star"], [(b, c_star[b]) for b in range(sysc.B)])
    print(f"genie: c_star in [{c_star.min():.4g}, {c_star.max():.4g}]")
    print(f"genie: wrote {os.path.join(exp.out, 'genie.csv')}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the config-error code
        return int(exc.code or 0)
    from .experiment import ConfigError
    try:
        exp = _load(args)
        handler = {"se": cmd_se, "simulate": cmd_simulate, "roc": cmd_roc,
                   "rates": cmd_rates, "genie": cmd_genie}[args.command]
        return handler(exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, not a usage problem
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
