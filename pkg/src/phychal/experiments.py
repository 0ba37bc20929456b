"""Seeded Monte Carlo orchestration and CSV emission for each experiment kind.

Every trial gets its own generator seeded from
``(master seed, experiment id, sweep index, stream, trial index)`` through
:class:`numpy.random.SeedSequence`, and results are stored by trial index, so
outputs do not depend on how trials are spread over threads.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from . import __version__
from .channel import PowerDelayProfile, sample_realization, subcarrier_correlation
from .config import KINDS, ExperimentSpec
from .protocol import (
    H0,
    H1,
    ScenarioConfig,
    choose_threshold,
    detection_probability,
    simulate_trial,
    snr_from_db,
    verify,
)
from .security import equivocation_bound
from .stats import (
    ChiSqFit,
    DegenerateFitError,
    empirical_roc,
    empirical_threshold,
    fit_from_samples,
    noncentral_chisq_cdf,
    noncentral_chisq_pdf,
)

log = logging.getLogger(__name__)

EXPERIMENT_IDS = {kind: i for i, kind in enumerate(KINDS)}
PF_GRID = np.logspace(-4, 0, 41)


def trial_rng(seed: int, exp_id: int, sweep_idx: int, stream: int, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(exp_id, sweep_idx, stream, trial))
    return np.random.default_rng(ss)


def _parallel(fn, n: int, threads: int) -> None:
    """Call fn(start, stop) over contiguous chunks of range(n)."""
    threads = max(1, min(threads, n))
    if threads == 1:
        fn(0, n)
        return
    bounds = np.linspace(0, n, 4 * threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda ab: fn(*ab), zip(bounds[:-1], bounds[1:])))


def collect_statistics(
    sc: ScenarioConfig,
    hypothesis: int,
    trials: int,
    seed: int,
    exp_id: int = 0,
    sweep_idx: int = 0,
    threads: int = 1,
    search_points: Sequence[int] | None = None,
) -> np.ndarray:
    """Simulate ``trials`` authentications and verify each with every grid size.

    Returns an array of shape ``(len(search_points), trials)``; the default is
    the scenario's own verifier only. All verifiers see the same received data.
    """
    nws = (sc.search_points,) if search_points is None else tuple(search_points)
    out = np.empty((len(nws), trials))

    def work(start: int, stop: int) -> None:
        for t in range(start, stop):
            data = simulate_trial(sc, hypothesis, trial_rng(seed, exp_id, sweep_idx, hypothesis, t))
            out[:, t] = [verify(sc, data, nw) for nw in nws]

    _parallel(work, trials, threads)
    return out


def run_trials(
    sc: ScenarioConfig,
    hypothesis: int,
    trials: int,
    seed: int,
    exp_id: int = 0,
    sweep_idx: int = 0,
    threads: int = 1,
) -> np.ndarray:
    return collect_statistics(sc, hypothesis, trials, seed, exp_id, sweep_idx, threads)[0]


def correlation_estimate(
    pdp: PowerDelayProfile,
    fft_size: int,
    delta_l: int,
    trials: int,
    seed: int,
    exp_id: int = 0,
    sweep_idx: int = 0,
    threads: int = 1,
) -> complex:
    """Sample correlation E[h_0 h_dl*] / sqrt(E|h_0|^2 E|h_dl|^2) over fresh channels."""
    h = np.empty((trials, 2), dtype=np.complex128)

    def work(start: int, stop: int) -> None:
        for t in range(start, stop):
            rng = trial_rng(seed, exp_id, sweep_idx, 0, t)
            h[t] = sample_realization(rng, pdp, [0, delta_l], fft_size).subcarrier_gains

    _parallel(work, trials, threads)
    num = np.mean(h[:, 0] * np.conj(h[:, 1]))
    den = math.sqrt(np.mean(np.abs(h[:, 0]) ** 2) * np.mean(np.abs(h[:, 1]) ** 2))
    return complex(num / den)


# ------------------------------------------------------------------ tables


@dataclass
class Table:
    columns: Sequence[str]
    rows: list

    def render(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def _safe_fit(samples: np.ndarray, dof_pairs: int) -> ChiSqFit | None:
    try:
        return fit_from_samples(samples, dof_pairs)
    except DegenerateFitError:
        return None


def _sweep_points(spec: ExperimentSpec):
    sw = spec.values["sweep"]
    return list(itertools.product(sw["snr_db"], sw["beta"], sw["modulation_order"]))


def _point_scenario(spec: ExperimentSpec, snr_db: float, beta: float, m: int) -> ScenarioConfig:
    return replace(spec.scenario, snr=snr_from_db(snr_db), beta=beta, modulation_order=m)


def _roc_rows(h1, h0, fit1, fit0, key) -> list:
    roc = empirical_roc(h1, h0)
    rows = []
    for pf in PF_GRID:
        pd_fit = math.nan
        if fit1 is not None and fit0 is not None:
            pd_fit = detection_probability(fit1, choose_threshold(fit0, float(pf)))
        rows.append((*key, pf, roc.pd_at(pf), pd_fit))
    return rows


# ------------------------------------------------------------ experiments


def run_correlation(spec: ExperimentSpec, threads: int = 1) -> dict[str, Table]:
    sc = spec.scenario
    n, cp, tau = sc.ofdm.fft_size, sc.ofdm.cp_len, sc.pdp.tau_rms_norm
    df = sc.ofdm.bandwidth_hz / n
    curve = Table(("delta_ell", "delta_f_hz", "rho_abs", "rho_re", "rho_im"), [])
    for dl in range(n // 2 + 1):
        rho = subcarrier_correlation(tau, cp, n, dl)
        curve.rows.append((dl, dl * df, abs(rho), rho.real, rho.imag))
    mc = Table(("delta_ell", "rho_closed_abs", "rho_mc_abs", "trials", "normalization"), [])
    exp_id = EXPERIMENT_IDS["correlation"]
    for i, dl in enumerate(spec.values["sweep"]["delta_ell"]):
        est = correlation_estimate(sc.pdp, n, dl, spec.trials, spec.seed, exp_id, i, threads)
        closed = abs(subcarrier_correlation(tau, cp, n, dl))
        mc.rows.append((dl, closed, abs(est), spec.trials, sc.pdp.normalization))
    return {"correlation.csv": curve, "correlation_mc.csv": mc}


def run_equivocation(spec: ExperimentSpec, threads: int = 1) -> dict[str, Table]:
    sw = spec.values["sweep"]
    table = Table(("m", "beta", "bound_bits", "coherent_mi_bits", "quad_error"), [])
    for m in sw["equivocation_m"]:
        for beta in sw["equivocation_beta"]:
            r = equivocation_bound(beta, m)
            table.rows.append((m, beta, r.bound, r.coherent_mi, r.quad_error))
    return {"equivocation.csv": table}


def run_zeta_pdf(spec: ExperimentSpec, threads: int = 1, bins: int = 60) -> dict[str, Table]:
    exp_id = EXPERIMENT_IDS["zeta-pdf"]
    j = spec.scenario.plan.slots
    fits = Table(
        ("snr_db", "beta", "m", "hypothesis", "lam", "sigma2", "dof_pairs", "clamped",
         "mean", "ks_stat", "ks_pvalue"),
        [],
    )
    hist = Table(
        ("snr_db", "beta", "m", "hypothesis", "bin_lo", "bin_hi", "density_empirical", "density_fit"),
        [],
    )
    for idx, (snr_db, beta, m) in enumerate(_sweep_points(spec)):
        sc = _point_scenario(spec, snr_db, beta, m)
        log.info("zeta-pdf point snr=%g dB beta=%g M=%d", snr_db, beta, m)
        samples = {
            h: run_trials(sc, h, spec.trials, spec.seed, exp_id, idx, threads) for h in (H1, H0)
        }
        edges = np.linspace(0.0, max(s.max() for s in samples.values()), bins + 1)
        for h, z in samples.items():
            fit = _safe_fit(z, j)
            density, _ = np.histogram(z, bins=edges, density=True)
            if fit is None:
                fitted = np.full(bins, math.nan)
                fits.rows.append((snr_db, beta, m, h, math.nan, math.nan, j, 0, z.mean(), math.nan, math.nan))
            else:
                centres = 0.5 * (edges[:-1] + edges[1:])
                fitted = noncentral_chisq_pdf(centres, fit)
                ks = sps.kstest(z, lambda x, f=fit: noncentral_chisq_cdf(x, f))
                fits.rows.append(
                    (snr_db, beta, m, h, fit.lam, fit.sigma2, j, fit.clamped, z.mean(),
                     ks.statistic, ks.pvalue)
                )
            for lo, hi, d, f in zip(edges[:-1], edges[1:], density, fitted):
                hist.rows.append((snr_db, beta, m, h, lo, hi, d, f))
    return {"zeta_fit.csv": fits, "zeta_pdf.csv": hist}


def run_roc(spec: ExperimentSpec, threads: int = 1) -> dict[str, Table]:
    exp_id = EXPERIMENT_IDS["roc"]
    target = spec.values["verify"]["target_pf"]
    j = spec.scenario.plan.slots
    nw = spec.scenario.search_points
    roc = Table(("snr_db", "beta", "m", "nw", "pf", "pd", "pd_fit"), [])
    summary = Table(
        ("snr_db", "beta", "m", "nw", "target_pf", "threshold_empirical", "pd_empirical",
         "threshold_fit", "pd_fit"),
        [],
    )
    for idx, (snr_db, beta, m) in enumerate(_sweep_points(spec)):
        sc = _point_scenario(spec, snr_db, beta, m)
        log.info("roc point snr=%g dB beta=%g M=%d", snr_db, beta, m)
        h1 = run_trials(sc, H1, spec.trials, spec.seed, exp_id, idx, threads)
        h0 = run_trials(sc, H0, spec.trials, spec.seed, exp_id, idx, threads)
        fit1, fit0 = _safe_fit(h1, j), _safe_fit(h0, j)
        roc.rows.extend(_roc_rows(h1, h0, fit1, fit0, (snr_db, beta, m, nw)))
        summary.rows.append((snr_db, beta, m, nw, *_operating_point(h1, h0, fit1, fit0, target)))
    return {"roc.csv": roc, "roc_summary.csv": summary}


def _operating_point(h1, h0, fit1, fit0, target: float) -> tuple:
    thr_emp = empirical_threshold(h0, target)
    pd_emp = float(np.mean(h1 >= thr_emp))
    thr_fit = pd_fit = math.nan
    if fit1 is not None and fit0 is not None:
        thr_fit = choose_threshold(fit0, target)
        pd_fit = detection_probability(fit1, thr_fit)
    return target, thr_emp, pd_emp, thr_fit, pd_fit


def impairment_study(
    sc: ScenarioConfig, search_points: Sequence[int], trials: int, seed: int, threads: int = 1,
    sweep_idx: int = 0,
) -> dict:
    """H1/H0 statistics with offsets on, verified at every grid size, plus an offset-free baseline.

    The baseline uses the largest grid over the same search range, so the only
    difference from the impaired run is the impairments themselves.
    """
    exp_id = EXPERIMENT_IDS["impairment-roc"]
    nws = tuple(search_points)
    clean = replace(
        sc, cfo_max=0.0, sample_offset_max=0, clock_offset_ppm_max=0.0,
        search_points=max(nws), search_range=sc.omega_max,
    )
    out = {"search_points": nws, "omega_max": sc.omega_max}
    for h in (H1, H0):
        out[("baseline", h)] = run_trials(clean, h, trials, seed, exp_id, 2 * sweep_idx, threads)
        stacked = collect_statistics(sc, h, trials, seed, exp_id, 2 * sweep_idx + 1, threads, nws)
        for nw, row in zip(nws, stacked):
            out[(nw, h)] = row
    return out


def run_impairment_roc(spec: ExperimentSpec, threads: int = 1) -> dict[str, Table]:
    target = spec.values["verify"]["target_pf"]
    nws = spec.values["sweep"]["search_points"]
    j = spec.scenario.plan.slots
    roc = Table(("snr_db", "beta", "m", "nw", "offsets", "pf", "pd", "pd_fit"), [])
    summary = Table(
        ("snr_db", "beta", "m", "nw", "offsets", "ks_h1_vs_baseline", "ks_h0_vs_baseline",
         "target_pf", "threshold_empirical", "pd_empirical", "threshold_fit", "pd_fit"),
        [],
    )
    for idx, (snr_db, beta, m) in enumerate(_sweep_points(spec)):
        sc = _point_scenario(spec, snr_db, beta, m)
        log.info("impairment-roc point snr=%g dB beta=%g M=%d", snr_db, beta, m)
        res = impairment_study(sc, nws, spec.trials, spec.seed, threads, idx)
        base1, base0 = res[("baseline", H1)], res[("baseline", H0)]
        cases = [("baseline", max(nws), 0)] + [(nw, nw, 1) for nw in nws]
        for key, nw, offsets in cases:
            h1, h0 = res[(key, H1)], res[(key, H0)]
            fit1, fit0 = _safe_fit(h1, j), _safe_fit(h0, j)
            tag = (snr_db, beta, m, nw)
            rows = _roc_rows(h1, h0, fit1, fit0, tag)
            roc.rows.extend((*r[:4], offsets, *r[4:]) for r in rows)
            ks1 = sps.ks_2samp(h1, base1).statistic
            ks0 = sps.ks_2samp(h0, base0).statistic
            summary.rows.append(
                (*tag, offsets, ks1, ks0, *_operating_point(h1, h0, fit1, fit0, target))
            )
    return {"roc.csv": roc, "impairment_summary.csv": summary}


RUNNERS = {
    "correlation": run_correlation,
    "equivocation": run_equivocation,
    "zeta-pdf": run_zeta_pdf,
    "roc": run_roc,
    "impairment-roc": run_impairment_roc,
}


def run(spec: ExperimentSpec, out_dir, threads: int = 1) -> dict[str, Path]:
    """Run ``spec.kind`` and write its CSV files plus ``manifest.json`` into ``out_dir``."""
    if spec.kind not in RUNNERS:
        raise ValueError(f"unknown experiment kind {spec.kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    tables = RUNNERS[spec.kind](spec, threads)
    written: dict[str, Path] = {}
    digests = {}
    for name, table in sorted(tables.items()):
        text = table.render()
        path = out / name
        path.write_text(text, encoding="utf-8")
        written[name] = path
        digests[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = spec.manifest()
    manifest.update(
        {
            "version": __version__,
            "seed": spec.seed,
            "trials": spec.trials,
            "experiment_id": EXPERIMENT_IDS[spec.kind],
            "seeding": "SeedSequence(seed, spawn_key=(experiment_id, sweep_index, stream, trial))",
            "outputs": digests,
        }
    )
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written["manifest.json"] = path
    return written
