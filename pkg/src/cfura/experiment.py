"""Experiment orchestration: config files, seeded trials, CSV outputs.

Config files are flat `key = value` text under [section] headers (read with
configparser).  A run executes: SE precompute (cached by config hash) ->
per-trial scene sampling -> AMP -> calibrated detection -> estimation
reports -> genie baseline -> downlink moments, power normalization and
rates; outputs are CSV tables plus a plain-text manifest.  Everything is
bit-reproducible from (config, seed), independent of the thread count.
"""

from __future__ import annotations

import concurrent.futures
import configparser
import csv
import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .amp import amp_run
from .denoiser import EffectiveNoise, kernel
from .detection import DetectionReport, calibrate_threshold, md_fa_probabilities
from .downlink import (dl_conditional_moments, dl_power_normalization,
                       form_clusters, median_rate, rate_cdf, uatf_rates)
from .estimation import (empirical_conditional_moments, genie_asymptotic_fixed_point,
                         genie_mmse_estimate, theory_conditional_moments)
from .model import (LSFCProfile, SystemConfig, build_hex_geometry,
                    build_wyner_geometry, calibrate_snr, export_geometry,
                    make_priors, sample_scene)
from .rng import StreamFactory
from .se import se_recursion

SCHEMA_VERSION = 1
ROC_GRID_OFFSETS = np.linspace(-9.0, 9.0, 19)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    system: SystemConfig
    geometry: LSFCProfile
    geometry_kind: str
    detection_mode: str = "equal_error"
    target_fa: float | None = None
    q: int = 3
    trials: int = 10
    onsager: str = "empirical"
    threads: int = 1
    out: str = "runs/out"
    raw: dict = field(default_factory=dict, repr=False)

    def canonical_text(self, keys=None):
        lines = []
        for sec in sorted(self.raw):
            for key in sorted(self.raw[sec]):
                if keys is None or (sec, key) in keys or sec in ("system", "geometry"):
                    lines.append(f"{sec}.{key} = {self.raw[sec][key]}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _floats(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def _broadcast(values, U, name):
    if len(values) == U:
        return np.array(values)
    if len(values) >= 1 and U % len(values) == 0:
        return np.array((values * (U // len(values))))
    raise ConfigError(f"{name} needs 1, U, or a divisor-of-U count of values")


def load_config(path, seed=None, trials=None, out=None, threads=None):
    """Parse an experiment config file, applying CLI overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    try:
        geo = cp["geometry"]
        kind = geo.get("kind", "wyner").strip().lower()
        if kind == "wyner":
            geometry = build_wyner_geometry(geo.getfloat("crosstalk", 0.5))
        elif kind == "hex":
            geometry = build_hex_geometry(side=geo.getfloat("side", 100.0),
                                          d0=geo.getfloat("d0", 13.57),
                                          gamma=geo.getfloat("gamma", 3.67))
        else:
            raise ConfigError(f"unknown geometry kind {kind!r}")
        U, B = geometry.U, geometry.B

        sysc = cp["system"]
        L = sysc.getint("l")
        M = sysc.getint("m")
        if "snr_db" in sysc:
            snr = 10.0 ** (sysc.getfloat("snr_db") / 10.0)
        elif "snr_rx_db" in geo:
            snr = calibrate_snr(10.0 ** (geo.getfloat("snr_rx_db") / 10.0), geometry)
            # snr_ref chooses what "received SNR" anchors: the default
            # 'symbol' references the whole L-chip codeword (unit energy per
            # codeword); 'chip' references the post-despreading per-antenna
            # SNR, i.e. sigma_w^2 = peak_gain / snr_rx
            ref = geo.get("snr_ref", "symbol").strip().lower()
            if ref == "chip":
                snr /= L
            elif ref != "symbol":
                raise ConfigError(f"unknown snr_ref {ref!r}")
        else:
            raise ConfigError("need system.snr_db or geometry.snr_rx_db")
        alpha = _broadcast(_floats(sysc.get("alpha", "2.0")), U, "alpha")
        lam = _broadcast(_floats(sysc.get("lambda", "0.1")), U, "lambda")
        system = SystemConfig(
            L=L, U=U, B=B, M=M, alpha=alpha, lam=lam, snr=snr,
            T=sysc.getint("t", 16),
            seed=seed if seed is not None else sysc.getint("seed", 0),
            mc_se=sysc.getint("mc_se", 100_000),
            mc_cond=sysc.getint("mc_cond", 100_000))

        det = cp["detection"] if cp.has_section("detection") else {}
        mode = det.get("mode", "equal_error").strip().lower() if det else "equal_error"
        target = None
        if mode == "target_fa":
            target = float(det.get("target"))
            if not 0.0 < target < 1.0:
                raise ConfigError("detection.target must lie in (0, 1)")
        elif mode != "equal_error":
            raise ConfigError(f"unknown detection mode {mode!r}")

        dl = cp["downlink"] if cp.has_section("downlink") else {}
        q = int(dl.get("q", min(3, B))) if dl else min(3, B)
        if not 1 <= q <= B:
            raise ConfigError(f"downlink.q must lie in [1, {B}]")

        run = cp["run"] if cp.has_section("run") else {}
        n_trials = trials if trials is not None else (int(run.get("trials", 10)) if run else 10)
        if n_trials < 1:
            raise ConfigError("run.trials must be >= 1")
        onsager = (run.get("onsager", "empirical") if run else "empirical").strip().lower()
        if onsager not in ("empirical", "se"):
            raise ConfigError(f"unknown onsager mode {onsager!r}")
        out_dir = out if out is not None else (run.get("out", "runs/out") if run else "runs/out")
        if threads is None:
            threads = int(run.get("threads", os.environ.get("CFURA_THREADS", "1"))
                          if run else os.environ.get("CFURA_THREADS", "1"))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc

    raw = {sec: dict(cp[sec]) for sec in cp.sections()}
    raw.setdefault("system", {})["seed"] = str(system.seed)
    return ExperimentConfig(system=system, geometry=geometry, geometry_kind=kind,
                            detection_mode=mode, target_fa=target, q=q,
                            trials=n_trials, onsager=onsager,
                            threads=max(1, int(threads)), out=out_dir, raw=raw)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (int, float, np.floating, np.integer))
                             else str(v) for v in row])


# ----------------------------------------------------------------- SE cache

def se_cache_key(exp):
    text = exp.canonical_text() + f"mode=block\nschema={SCHEMA_VERSION}\n"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def compute_se(exp, cache_dir=None):
    """Per-RU tau trajectory and per-location mmse traces, cached on disk."""
    sysc = exp.system
    cache_path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        cache_path = os.path.join(cache_dir, f"se_cache_{se_cache_key(exp)}.npz")
        if os.path.exists(cache_path):
            data = np.load(cache_path)
            return data["tau"], data["mmse_tr"]
    priors = make_priors(sysc, exp.geometry)
    factory = StreamFactory(sysc.seed)
    trace = se_recursion(priors, sysc.n_codewords / sysc.L, sysc.sigma_w2,
                         sysc.T, sysc.mc_se, factory._seq["se"], M=sysc.M,
                         mode="block")
    tau = np.stack([c.tau(sysc.M) for c in trace.c_seq])
    mmse_tr = np.stack([[float(np.trace(m).real) for m in mm]
                        for mm in trace.mmse_seq])
    if cache_path is not None:
        np.savez(cache_path, tau=tau, mmse_tr=mmse_tr)
    return tau, mmse_tr


# ------------------------------------------------------------------- trials

def _trial_worker(trial, streams, exp, priors, schedule, thresholds, roc_grid):
    sysc = exp.system
    scene = sample_scene(sysc, exp.geometry, streams)
    trace = amp_run(scene, priors, sysc, schedule, onsager_mode=exp.onsager)
    c_fin = schedule[-1]

    U = sysc.U
    n_grid = roc_grid.shape[1]
    md_cnt = np.zeros((U, n_grid), dtype=np.int64)
    fa_cnt = np.zeros((U, n_grid), dtype=np.int64)
    n_act = np.zeros(U, dtype=np.int64)
    n_ina = np.zeros(U, dtype=np.int64)
    decisions = []
    for u in range(U):
        llr = kernel(priors[u], c_fin).log_lr(trace.r_final[u], prior_odds=False)
        act = scene.activity[u].astype(bool)
        n_act[u] = act.sum()
        n_ina[u] = (~act).sum()
        for k in range(n_grid):
            dec_k = llr < roc_grid[u, k]
            md_cnt[u, k] = (act & ~dec_k).sum()
            fa_cnt[u, k] = (~act & dec_k).sum()
        decisions.append((llr < thresholds[u]).astype(np.int8))

    report = DetectionReport(decisions=decisions, p_md=np.zeros(U),
                             p_fa=np.zeros(U), thresholds=thresholds)
    sum_ad, n_ad, sum_fa, n_fa = empirical_conditional_moments(scene, trace, report)

    genie = genie_mmse_estimate(scene)
    genie_err = np.array([e.sum() for e in genie.errors_sq])
    genie_rows = np.array([idx.size for idx in genie.active_index], dtype=np.int64)
    mu_sum = np.stack([m.sum(axis=0) if m.size else np.zeros(sysc.B)
                       for m in genie.mu])
    genie_mse_th = np.array([s.sum() for s in genie.mse_sherman])

    return dict(trial=trial, mse=trace.mse, mse_final=trace.mse_final,
                md_cnt=md_cnt, fa_cnt=fa_cnt, n_act=n_act, n_ina=n_ina,
                sum_ad=sum_ad, n_ad=n_ad, sum_fa=sum_fa, n_fa=n_fa,
                genie_err=genie_err, genie_rows=genie_rows, mu_sum=mu_sum,
                genie_mse_th=genie_mse_th)


@dataclass
class RunResult:
    manifest_path: str
    out_dir: str
    tau: np.ndarray
    thresholds: np.ndarray
    p_md: np.ndarray
    p_fa: np.ndarray
    mse_rows: list
    rates: object
    median_uatf: float
    median_genie: float
    trial_stats: list = field(repr=False, default_factory=list)


def run_experiment(exp: ExperimentConfig):
    """Execute the full pipeline and write the CSV/manifest file set."""
    t_start = time.time()
    sysc = exp.system
    os.makedirs(exp.out, exist_ok=True)
    priors = make_priors(sysc, exp.geometry)
    factory = StreamFactory(sysc.seed)
    alpha_eff = sysc.n_codewords / sysc.L

    tau, mmse_tr = compute_se(exp, cache_dir=exp.out)
    schedule = [EffectiveNoise.from_tau(tau[t], sysc.M) for t in range(sysc.T)]
    c_fin = schedule[-1]
    mse_pred = tau.sum(axis=1) * sysc.M - sysc.F * sysc.sigma_w2

    # threshold calibration per location
    thresholds = np.empty(sysc.U)
    for u in range(sysc.U):
        thresholds[u] = calibrate_threshold(
            priors[u], c_fin, mode=exp.detection_mode, target=exp.target_fa)
    p_md = np.empty(sysc.U)
    p_fa = np.empty(sysc.U)
    for u in range(sysc.U):
        p_md[u], p_fa[u] = md_fa_probabilities(priors[u], c_fin, thresholds[u])

    roc_grid = thresholds[:, None] + ROC_GRID_OFFSETS[None, :]

    # Monte Carlo trials (deterministic per-trial streams, fixed-order merge)
    trial_streams = factory.trial_generators(
        exp.trials, names=("codebook", "activity", "channel", "noise"))
    results = [None] * exp.trials
    if exp.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=exp.threads) as pool:
            futs = {pool.submit(_trial_worker, t, trial_streams[t], exp, priors,
                                schedule, thresholds, roc_grid): t
                    for t in range(exp.trials)}
            for fut in concurrent.futures.as_completed(futs):
                results[futs[fut]] = fut.result()
    else:
        for t in range(exp.trials):
            results[t] = _trial_worker(t, trial_streams[t], exp, priors,
                                       schedule, thresholds, roc_grid)

    # ------------------------------------------------------------- mse_trace
    mse_rows = []
    for res in results:
        for t in range(sysc.T):
            mse_rows.append((res["trial"], t + 1, res["mse"][t], mse_pred[t]))
    write_csv(os.path.join(exp.out, "mse_trace.csv"),
              ["trial", "t", "mse_empirical", "mse_se_predicted"], mse_rows)

    # ------------------------------------------------------------------ roc
    md_cnt = sum(res["md_cnt"] for res in results)
    fa_cnt = sum(res["fa_cnt"] for res in results)
    n_act = sum(res["n_act"] for res in results)
    n_ina = sum(res["n_ina"] for res in results)
    roc_rows = []
    for u in range(sysc.U):
        for k, off in enumerate(ROC_GRID_OFFSETS):
            nu_log = roc_grid[u, k]
            pm, pf = md_fa_probabilities(priors[u], c_fin, nu_log)
            md_e = md_cnt[u, k] / n_act[u] if n_act[u] else float("nan")
            fa_e = fa_cnt[u, k] / n_ina[u] if n_ina[u] else float("nan")
            roc_rows.append((u, nu_log, pm, pf, md_e, fa_e))
    write_csv(os.path.join(exp.out, "roc.csv"),
              ["location", "nu_log", "p_md_theory", "p_fa_theory",
               "p_md_empirical", "p_fa_empirical"], roc_rows)

    # ------------------------------------------------------------ estimation
    cond_seqs = factory._seq["cond"].spawn(2)
    th_ad, _, th_fa, _ = theory_conditional_moments(
        priors, c_fin, thresholds, p=2, mc=sysc.mc_cond,
        rng_seq=cond_seqs[0], on_insufficient="nan")
    sum_ad = sum(res["sum_ad"] for res in results)
    n_ad = sum(res["n_ad"] for res in results)
    genie_err = sum(res["genie_err"] for res in results)
    genie_rows_n = sum(res["genie_rows"] for res in results)
    genie_mse_th = sum(res["genie_mse_th"] for res in results)
    c_star = np.array([genie_asymptotic_fixed_point(
        exp.geometry, sysc.lam, alpha_eff, sysc.sigma_w2, b) for b in range(sysc.B)])
    est_rows = []
    for u in range(sysc.U):
        f = float(sysc.F)
        mse_ad_emp = sum_ad[u] / n_ad[u] / f if n_ad[u] else float("nan")
        mse_genie_emp = (genie_err[u] / genie_rows_n[u] / f
                         if genie_rows_n[u] else float("nan"))
        genie_asym = float(np.mean(exp.geometry.g[u] /
                                   (1.0 + exp.geometry.g[u] / c_star)))
        est_rows.append((u, n_ad[u] / exp.trials, mse_ad_emp, th_ad[u] / f,
                         mse_genie_emp, genie_asym))
    write_csv(os.path.join(exp.out, "estimation.csv"),
              ["location", "n_detected", "mse_Ad_empirical", "mse_Ad_theory",
               "mse_genie_empirical", "mse_genie_asymptotic"], est_rows)

    # -------------------------------------------------------------- downlink
    clusters = form_clusters(exp.geometry, exp.q)
    tables = dl_conditional_moments(priors, c_fin, thresholds, p_md, p_fa,
                                    sysc.M, mc=sysc.mc_cond,
                                    rng_seq=cond_seqs[1])
    rho = dl_power_normalization(tables.z, sysc.lam, alpha_eff,
                                 clusters.coverage, sysc.L)
    rates = uatf_rates(exp.geometry, clusters, tables, rho, sysc.sigma_w2,
                       sysc.L, sysc.lam, alpha_eff, sysc.M)
    weights = sysc.lam * sysc.n_codewords
    weights = weights / weights.sum()
    rate_rows = [(u, rates.rate_uatf_bits[u], rates.rate_genie_bits[u], weights[u])
                 for u in range(sysc.U)]
    write_csv(os.path.join(exp.out, "rates_cdf.csv"),
              ["location", "rate_uatf_bits", "rate_genie_bits", "cdf_weight"],
              rate_rows)
    med = median_rate(rates.rate_uatf_bits, sysc.lam, sysc.n_codewords)
    med_g = median_rate(rates.rate_genie_bits, sysc.lam, sysc.n_codewords)

    # ------------------------------------------------------------- se trace
    se_rows = []
    for t in range(sysc.T):
        se_rows.append((t + 1, *tau[t], *mmse_tr[t]))
    write_csv(os.path.join(exp.out, "se_trace.csv"),
              ["t"] + [f"tau_{b + 1}" for b in range(sysc.B)]
              + [f"mmse_tr_{u + 1}" for u in range(sysc.U)], se_rows)

    export_geometry(exp.geometry, os.path.join(exp.out, "geometry.txt"))
    manifest_path = write_manifest(exp, factory, elapsed=time.time() - t_start)
    return RunResult(manifest_path=manifest_path, out_dir=exp.out, tau=tau,
                     thresholds=thresholds, p_md=p_md, p_fa=p_fa,
                     mse_rows=mse_rows, rates=rates, median_uatf=med,
                     median_genie=med_g, trial_stats=results)


def write_manifest(exp, factory, elapsed=None):
    path = os.path.join(exp.out, "manifest.txt")
    with open(path, "w") as fh:
        fh.write(f"schema_version = {SCHEMA_VERSION}\n")
        fh.write(f"package_version = {__version__}\n")
        fh.write(f"config_hash = {exp.config_hash()}\n")
        fh.write(f"master_seed = {exp.system.seed}\n")
        for name in ("codebook", "activity", "channel", "noise", "se", "cond"):
            fh.write(f"stream_{name} = {factory.spawn_seed(name):016x}\n")
        fh.write(f"created_utc = {time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())}\n")
        if elapsed is not None:
            fh.write(f"wall_clock_s = {elapsed:.1f}\n")
        fh.write("[config]\n")
        fh.write(exp.canonical_text())
    return path
