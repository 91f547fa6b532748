"""Seeded multi-drop Monte-Carlo campaigns, CDF aggregation and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import cluster_by_distance, fixed_baseline
from .config import SWEEP_PARAMETERS, ConfigError, ExperimentConfig, dump_config
from .estimation import (assign_pilots, channel_sqrt, draw_channels,
                         estimation_statistics, lmmse_estimate,
                         simulate_pilot_observations)
from .precoding import (equal_power, lmmse_precoder, mr_normalizer, normalize,
                        sample_normalizer)
from .rate import (MomentAccumulator, accumulate_gains, closed_form_mr,
                   effective_gains, scheme_layout, se_prefactor, sic_cluster_sinrs,
                   sinr_mixed)
from .timing import timing_model, ul_phase_diagonals
from .topology import generate_drop

log = logging.getLogger(__name__)

CSV_COLUMNS = ("drop", "scheme", "precoder", "clusterer", "user", "SINR", "SE",
               "sum_SE", "diagnostics")


def fmt(x) -> str:
    return f"{x:.9g}"


def drop_seed(base_seed: int, drop: int) -> np.random.SeedSequence:
    """Independent stream for one drop; depends only on (base_seed, drop)."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(drop,))


@dataclass
class DropResult:
    drop: int
    sinr: dict = field(default_factory=dict)  # (scheme, precoder, clusterer) -> (K,)
    cluster_sinr: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)  # same keys -> MomentAccumulator
    diagnostics: dict = field(default_factory=dict)
    prefactor: float = 0.0


def _plan(cfg, clusterer, drop):
    D = cfg.ofdm.sampling_distance
    if cfg.force_synchronous:
        D = np.inf
    if clusterer == "distance":
        return cluster_by_distance(drop.distances, cfg.M0, D)
    return fixed_baseline(drop.beta, cfg.M0)


def simulate_drop(cfg: ExperimentConfig, drop_index: int) -> DropResult:
    """All requested (scheme, precoder, clusterer) SINRs for one drop.

    Every combination is evaluated on the same channel and noise draws.
    """
    topo_seed, chan_seed, norm_seed = drop_seed(cfg.base_seed, drop_index).spawn(3)
    net, ofdm = cfg.network, cfg.ofdm
    drop = generate_drop(net, topo_seed)
    pilots = assign_pilots(net.num_users, ofdm.coherence_block.n_sub,
                           drop.user_positions, net.area_side, net.wrap_around)
    R_sqrt = channel_sqrt(drop.R)
    n_eval = ofdm.eval_subcarrier
    N = ofdm.num_subcarriers
    result = DropResult(drop_index)
    result.prefactor = se_prefactor(ofdm.coherence_block.tau, pilots.tau_p, N,
                                    ofdm.symbol_length)
    diag = {"floored": 0, "ill_conditioned": 0,
            "psd_clipped": drop.diagnostics.get("psd_clipped", 0)}

    for clusterer in cfg.clusterers:
        plan = _plan(cfg, clusterer, drop)
        timing = timing_model(drop.distances, plan.serving, ofdm,
                              "zero" if cfg.force_synchronous else cfg.uplink_reference)
        if cfg.force_synchronous:
            timing.dl_offset[:] = 0
        est = estimation_statistics(drop.R, pilots, ul_phase_diagonals(timing.ul_offset, ofdm),
                                    cfg.ul_power, net.noise_power, cfg.psi_mode)
        rho = equal_power(plan.serving, cfg.ap_power)
        layouts = {s: scheme_layout(s, plan, timing.dl_offset, N, n_eval)
                   for s in cfg.schemes}

        normalizers = {}
        if "MR" in cfg.precoders:
            normalizers["MR"] = mr_normalizer(est)
        if "LMMSE" in cfg.precoders:
            rng = np.random.default_rng(norm_seed)
            total = np.zeros_like(est.trace_B)
            left = cfg.normalization_realizations
            while left > 0:
                b = min(cfg.batch_size, left)
                h = draw_channels(R_sqrt, b, rng)
                hhat = lmmse_estimate(simulate_pilot_observations(h, est, rng), est)
                wbar = lmmse_precoder(hhat, est.C, plan.serving, est.ul_power,
                                      net.noise_power, diag)
                total += sample_normalizer(wbar) * b
                left -= b
            normalizers["LMMSE"] = total / cfg.normalization_realizations

        mc_precoders = [p for p in cfg.precoders
                        if not (p == "MR" and cfg.mr_method == "closed_form")]
        acc = {(s, p): MomentAccumulator.zeros(net.num_users, layouts[s].num_slots)
               for s in cfg.schemes for p in mc_precoders}
        if mc_precoders:
            # same seed for every clusterer: draws are shared across all combinations
            rng = np.random.default_rng(chan_seed)
            left = cfg.realizations_per_drop
            while left > 0:
                b = min(cfg.batch_size, left)
                h = draw_channels(R_sqrt, b, rng)
                hhat = lmmse_estimate(simulate_pilot_observations(h, est, rng), est)
                for p in mc_precoders:
                    if p == "MR":
                        wbar = hhat
                    else:
                        wbar = lmmse_precoder(hhat, est.C, plan.serving, est.ul_power,
                                              net.noise_power, diag)
                    G = effective_gains(h, normalize(wbar, rho, normalizers[p]))
                    for s in cfg.schemes:
                        acc[s, p] += accumulate_gains(G, layouts[s])
                left -= b

        for s in cfg.schemes:
            for p in cfg.precoders:
                key = (s, p, clusterer)
                if p == "MR" and cfg.mr_method == "closed_form":
                    result.sinr[key] = closed_form_mr(est, layouts[s], rho, net.noise_power)
                    continue
                result.moments[key] = acc[s, p]
                result.sinr[key] = sinr_mixed(acc[s, p], net.noise_power, diag)
                result.cluster_sinr[key] = sic_cluster_sinrs(acc[s, p], net.noise_power)
    result.diagnostics = diag
    if diag["floored"] or diag["ill_conditioned"]:
        log.warning("drop %d: %d floored denominators, %d ill-conditioned solves",
                    drop_index, diag["floored"], diag["ill_conditioned"])
    return result


def combinations(cfg: ExperimentConfig):
    return [(s, p, c) for c in cfg.clusterers for p in cfg.precoders for s in cfg.schemes]


def run_drops(cfg: ExperimentConfig, workers: int = 1) -> list[DropResult]:
    """Simulate every drop; the result list is in drop order for any worker count."""
    indices = range(cfg.num_drops)
    if workers <= 1:
        return [simulate_drop(cfg, d) for d in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(simulate_drop, [cfg] * cfg.num_drops, indices))


def aggregate_cdf(values) -> dict:
    """Empirical CDF (sorted values with levels i/n), median and 5th percentile."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("aggregate_cdf needs at least one value")
    n = v.size
    return {"values": v, "levels": np.arange(1, n + 1) / n,
            "median": float(np.median(v)), "p5": float(np.percentile(v, 5))}


def _diag_text(d: dict) -> str:
    return ";".join(f"{k}={d[k]}" for k in sorted(d))


def results_csv(cfg, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        diag = _diag_text(r.diagnostics)
        for key in combinations(cfg):
            gamma = r.sinr[key]
            se = r.prefactor * np.log2(1.0 + gamma)
            total = float(np.sum(se))
            for k in range(len(gamma)):
                w.writerow([r.drop, *key, k, fmt(gamma[k]), fmt(se[k]), fmt(total), diag])
    return buf.getvalue()


def sum_se_table(cfg, results) -> dict:
    """``{(scheme, precoder, clusterer): per-drop sum SE array}``."""
    return {key: np.array([r.prefactor * np.sum(np.log2(1.0 + r.sinr[key])) for r in results])
            for key in combinations(cfg)}


def column_name(key) -> str:
    return "_".join(key)


def per_drop_csv(cfg, results) -> str:
    table = sum_se_table(cfg, results)
    keys = combinations(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["drop", *map(column_name, keys)])
    for j, r in enumerate(results):
        w.writerow([r.drop, *(fmt(table[k][j]) for k in keys)])
    return buf.getvalue()


def cdf_csv(cfg, results) -> str:
    table = sum_se_table(cfg, results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["scheme", "precoder", "clusterer", "sum_SE", "cdf"])
    for key in combinations(cfg):
        c = aggregate_cdf(table[key])
        for v, lvl in zip(c["values"], c["levels"]):
            w.writerow([*key, fmt(v), fmt(lvl)])
    return buf.getvalue()


def summary_rows(cfg, results):
    table = sum_se_table(cfg, results)
    rows = []
    for key in combinations(cfg):
        c = aggregate_cdf(table[key])
        rows.append({"scheme": key[0], "precoder": key[1], "clusterer": key[2],
                     "median": c["median"], "p5": c["p5"],
                     "mean": float(np.mean(table[key]))})
    return rows


def manifest(cfg, workers) -> dict:
    ofdm = cfg.ofdm
    return {
        "package": "cfmixed",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "workers": workers,
        "seeds": {"base_seed": cfg.base_seed,
                  "scheme": "SeedSequence(entropy=base_seed, spawn_key=(drop,))"},
        "derived": {
            "sample_period_s": ofdm.sample_period,
            "sampling_distance_m": ofdm.sampling_distance,
            "symbol_length": ofdm.symbol_length,
            "first_subcarrier": ofdm.first_subcarrier,
            "eval_subcarrier": ofdm.eval_subcarrier,
            "tau": ofdm.coherence_block.tau,
            "tau_p": ofdm.coherence_block.n_sub,
        },
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> dict:
    """Run all drops and write ``results.csv``, ``per_drop_sum_se.csv``,
    ``cdf.csv``, ``summary.csv`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output_path)
    out.mkdir(parents=True, exist_ok=True)
    results = run_drops(cfg, workers)
    files = {
        "results": (out / "results.csv", results_csv(cfg, results)),
        "per_drop": (out / "per_drop_sum_se.csv", per_drop_csv(cfg, results)),
        "cdf": (out / "cdf.csv", cdf_csv(cfg, results)),
    }
    rows = summary_rows(cfg, results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["scheme", "precoder", "clusterer", "median", "p5", "mean"])
    for r in rows:
        w.writerow([r["scheme"], r["precoder"], r["clusterer"],
                    fmt(r["median"]), fmt(r["p5"]), fmt(r["mean"])])
    files["summary"] = (out / "summary.csv", buf.getvalue())
    for path, text in files.values():
        path.write_text(text, newline="")
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, workers), indent=2))
    (out / "config.yaml").write_text(dump_config(cfg))
    return {"paths": {k: v[0] for k, v in files.items()}, "results": results,
            "summary": rows}


def sweep(cfg: ExperimentConfig, parameter: str, values, out_dir=None, workers=1) -> dict:
    """One experiment per value (ascending) plus a consolidated ``sweep.csv``."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; "
                          f"expected one of {list(SWEEP_PARAMETERS)}")
    out = Path(out_dir if out_dir is not None else cfg.output_path)
    values = sorted(set(values))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow([parameter, "scheme", "precoder", "clusterer", "median", "p5", "mean"])
    table = []
    for v in values:
        try:
            sub = cfg.with_parameter(parameter, v)
        except ValueError as exc:
            raise ConfigError(f"{parameter}={v}: {exc}") from None
        run = run_experiment(sub, out / f"{parameter}={v}", workers)
        for r in run["summary"]:
            w.writerow([v, r["scheme"], r["precoder"], r["clusterer"],
                        fmt(r["median"]), fmt(r["p5"]), fmt(r["mean"])])
            table.append({parameter: v, **r})
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    path.write_text(buf.getvalue(), newline="")
    return {"path": path, "rows": table}
