"""Batch command-line front-end.

``covmag <subcommand> --config run.ini --out results/`` writes the
subcommand's CSV/JSON artifacts, ``summary.json`` and ``resolved_config.ini``
into the output directory.  Failures exit nonzero and print a JSON error
object (also written to ``error.json`` when the output directory exists).
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bloch import SensorDrive, evolve_pair_trajectory
from .config import ConfigError, RunConfig, load_config
from .dd_spectroscopy import (DecoherenceInputs, SenseSequence, ToneSpec,
                              correlation_lineshape, psd_from_correlation)
from .fitting import ModelSpec, extract_local_dephasing, fit_correlated_t1, fit_model
from .io import read_csv, to_json, write_csv, write_json
from .master_equation import (QmeParams, evolve_correlation_tensor,
                              pearson_model_t1, relaxation_rate)
from .measurement import (ANTICORRELATION, CORRELATION, ReadoutModel,
                          driven_theory, pearson_estimate, sensitivity_minimum_field,
                          simulate_driven_experiment, simulate_t1_curve,
                          simulate_t2_experiment)
from .signal_gen import NoiseSpec, estimate_autocorrelation, generate_gaussian_noise

COMMANDS = {}


def command(name):
    def register(fn):
        COMMANDS[name] = fn
        return fn
    return register


def _readout(cfg):
    ro = cfg.block("readout") if cfg.has("readout") else {"sigma_r1": 1.0, "sigma_r2": 1.0}
    return ro["sigma_r1"], ro["sigma_r2"]


def _decoherence(cfg):
    return cfg.block("decoherence") if cfg.has("decoherence") else {"chi1": 0.0, "chi2": 0.0}


def _pearson_or_nan(rec):
    try:
        res = pearson_estimate(rec)
    except ValueError:
        # Both outcome sequences constant (e.g. at very short times).
        return math.nan, math.nan
    return res.r, res.stderr


@command("noise-gen")
def noise_gen(cfg: RunConfig, out: Path):
    b = cfg.block("noise")
    spec = NoiseSpec(b["tau_c_s"], b["duration_s"], b["dt_s"], (cfg.seed, 0))
    series = generate_gaussian_noise(spec)
    write_csv(out / "noise.csv", {"t_s": series.times, "G": series.samples}, cfg.seed)
    lag = int(round(spec.tau_c / spec.dt))
    summary = {"n_samples": len(series), "dt_s": spec.dt,
               "sample_mean": float(np.mean(series.samples)),
               "sample_variance": float(np.var(series.samples))}
    if lag < len(series) / 4:
        _, acf = estimate_autocorrelation(series, lag)
        summary["autocorrelation_at_tau_c"] = float(acf[lag])
        summary["target_at_tau_c"] = math.exp(-0.5)
    return summary


@command("t1-sim")
def t1_sim(cfg: RunConfig, out: Path):
    nb, db, tb = cfg.block("noise"), cfg.block("drives"), cfg.block("t1")
    sr1, sr2 = _readout(cfg)
    tau_c = nb["tau_c_s"]
    a1 = cfg.gamma * db["b1_T"] * np.exp(1j * db["phase1_rad"])
    a2 = cfg.gamma * db["b2_T"] * np.exp(1j * db["phase2_rad"])
    d1, d2 = 2 * np.pi * db["delta1_Hz"], 2 * np.pi * db["delta2_Hz"]
    drives = (SensorDrive(a1, d1), SensorDrive(a2, d2))
    duration = max(nb["duration_s"], tb["t_max_s"])
    spec = NoiseSpec(tau_c, duration, nb["dt_s"], (cfg.seed, 0))
    t = tb["t_max_s"] * np.arange(1, tb["n_times"] + 1) / tb["n_times"]

    records = simulate_t1_curve(drives, spec, t, tb["shots"],
                                ReadoutModel.symmetric_for_sigma(sr1),
                                ReadoutModel.symmetric_for_sigma(sr2),
                                (tb["pi1"], tb["pi2"]), (cfg.seed, 0), cfg.n_threads)
    r, err = np.array([_pearson_or_nan(rec) for rec in records]).T

    g1, g2 = relaxation_rate(a1, tau_c), relaxation_rate(a2, tau_c)
    sign = -1.0 if tb["pi1"] != tb["pi2"] else 1.0
    p = QmeParams(g1, g2, d1, d2)
    phi_zz = sign * evolve_correlation_tensor(p, t).phi_zz
    r_model = sign * pearson_model_t1(p, sr1, sr2, t)
    s1z = (-1 if tb["pi1"] else 1) * np.exp(-g1 * t)
    s2z = (-1 if tb["pi2"] else 1) * np.exp(-g2 * t)
    write_csv(out / "t1_curve.csv", {"t_s": t, "phi_zz": phi_zz, "s1z": s1z,
                                     "s2z": s2z, "r_model": r_model}, cfg.seed)
    write_csv(out / "t1_sim.csv", {"t_s": t, "r": r, "stderr": err, "r_model": r_model},
              cfg.seed)

    # Realization 0 (the one behind shot 0) up to the last sensing time.
    s0 = [(0.0, 0.0, -1.0 if f else 1.0) for f in (tb["pi1"], tb["pi2"])]
    traj = evolve_pair_trajectory(*drives, generate_gaussian_noise(spec), *s0)
    keep = slice(0, int(round(tb["t_max_s"] / spec.dt)) + 1)
    cols = {"t_s": traj.times[keep]}
    for name, s in (("s1", traj.s1), ("s2", traj.s2)):
        for k, ax in enumerate("xyz"):
            cols[name + ax] = s[keep, k]
    write_csv(out / "trajectory.csv", cols, cfg.seed)

    ok = np.isfinite(r) & (err > 0)
    z = (r[ok] - r_model[ok]) / err[ok]
    return {"Gamma1_per_s": g1, "Gamma2_per_s": g2, "T1_1_s": 1 / g1 if g1 else None,
            "T1_2_s": 1 / g2 if g2 else None, "shots": tb["shots"],
            "reduced_chi2_vs_model": float(np.mean(z**2)) if z.size else None,
            "t_s": t, "r": r, "r_model": r_model}


@command("t1-qme")
def t1_qme(cfg: RunConfig, out: Path):
    q = cfg.block("qme")
    sr1, sr2 = _readout(cfg)
    t = np.linspace(0.0, q["t_max_s"], q["n_times"])
    curves = []
    for k, f_det in enumerate(q["delta1_Hz"]):
        p = QmeParams(q["gamma1_per_s"], q["gamma2_per_s"], 2 * np.pi * f_det,
                      2 * np.pi * q["delta2_Hz"], q["gd11_per_s"], q["gd22_per_s"],
                      q["gd12_per_s"], q["r0"])
        sol = evolve_correlation_tensor(p, t)
        r = pearson_model_t1(p, sr1, sr2, t)
        write_csv(out / f"t1_qme_{k}.csv",
                  {"t_s": t, "phi_zz": sol.phi_zz, "s1z": np.exp(-p.Gamma1 * t),
                   "s2z": np.exp(-p.Gamma2 * t), "r_model": r}, cfg.seed)
        i = int(np.argmax(np.abs(r)))
        curves.append({"file": f"t1_qme_{k}.csv", "delta1_Hz": f_det,
                       "oscillation_Hz": float(np.max(np.abs(sol.eigenvalues.imag)) / (2 * np.pi)),
                       "r_peak": float(r[i]), "t_peak_s": float(t[i]),
                       "defective_generator": sol.defective})
    return {"curves": curves}


def _sweep_setup(cfg):
    sw, tb, dc = cfg.block("sweep"), cfg.block("tones"), _decoherence(cfg)
    if not len(tb["f_Hz"]) == len(tb["b1_T"]) == len(tb["b2_T"]):
        raise ConfigError("tones", "f_Hz, b1_T and b2_T must have equal lengths")
    tones = [ToneSpec(f, b1, b2) for f, b1, b2 in zip(tb["f_Hz"], tb["b1_T"], tb["b2_T"])]
    sr1, sr2 = _readout(cfg)
    dec = DecoherenceInputs(dc["chi1"], dc["chi2"], sr1, sr2)
    freqs = np.linspace(sw["f_start_Hz"], sw["f_stop_Hz"], sw["n_points"])
    fixed = sw["fixed_f1_Hz"]
    seqs = []
    for f in freqs:
        seq2 = SenseSequence.probing(f, sw["n_pulses"])
        seq1 = SenseSequence.probing(fixed, sw["n_pulses"]) if fixed else seq2
        seqs.append((seq1, seq2))
    return sw, tones, dec, freqs, seqs


def _s12(r, dec, seq2, gamma):
    if not np.isfinite(r):
        return math.nan
    est = psd_from_correlation(r, dec, math.exp(-dec.chi1), math.exp(-dec.chi2),
                               seq2.duration, seq2.tau, gamma)
    return est.S12_nT2_per_Hz


def _sweep_summary(freqs, r, r_model=None):
    i = int(np.nanargmax(np.abs(r)))
    out = {"f_extremum_Hz": float(freqs[i]), "r_extremum": float(r[i])}
    if r_model is not None:
        out["r_model"] = r_model
    return out


@command("t2-lineshape")
def t2_lineshape(cfg: RunConfig, out: Path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sw, tones, dec, freqs, seqs = _sweep_setup(cfg)
        r = np.array([correlation_lineshape(tones, s1, s2, dec, 1.0, cfg.gamma)
                      for s1, s2 in seqs])
    err = (1 - r**2) / math.sqrt(sw["shots"])
    s12 = [_s12(v, dec, s2, cfg.gamma) for v, (_, s2) in zip(r, seqs)]
    write_csv(out / "lineshape.csv", {"f_Hz": freqs, "r": r, "r_err_model": err,
                                      "S12_nT2_per_Hz": s12}, cfg.seed)
    summary = _sweep_summary(freqs, r)
    summary["warnings"] = sorted({str(w.message) for w in caught})
    return summary


@command("t2-sim")
def t2_sim(cfg: RunConfig, out: Path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sw, tones, dec, freqs, seqs = _sweep_setup(cfg)
        m1 = ReadoutModel.symmetric_for_sigma(dec.sigma_r1)
        m2 = ReadoutModel.symmetric_for_sigma(dec.sigma_r2)
        r, err, model = [], [], []
        for i, (s1, s2) in enumerate(seqs):
            rec = simulate_t2_experiment(tones, s1, s2, dec.chi1, dec.chi2, m1, m2,
                                         sw["shots"], (cfg.seed, i), cfg.gamma)
            est = _pearson_or_nan(rec)
            r.append(est[0])
            err.append(est[1])
            model.append(correlation_lineshape(tones, s1, s2, dec, 1.0, cfg.gamma))
    r, err, model = np.array(r), np.array(err), np.array(model)
    s12 = [_s12(v, dec, s2, cfg.gamma) for v, (_, s2) in zip(r, seqs)]
    write_csv(out / "lineshape.csv", {"f_Hz": freqs, "r": r, "r_err_model": err,
                                      "S12_nT2_per_Hz": s12}, cfg.seed)
    summary = _sweep_summary(freqs, r, model)
    z = (r - model) / err
    summary["reduced_chi2_vs_model"] = float(np.nanmean(z**2))
    summary["warnings"] = sorted({str(w.message) for w in caught})
    return summary


@command("psd")
def psd(cfg: RunConfig, out: Path):
    b, dc = cfg.block("psd"), _decoherence(cfg)
    if len(b["f_Hz"]) != len(b["r"]):
        raise ConfigError("psd", "f_Hz and r must have equal lengths")
    sr1, sr2 = _readout(cfg)
    dec = DecoherenceInputs(dc["chi1"], dc["chi2"], sr1, sr2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        seqs = [SenseSequence.probing(f, b["n_pulses"]) for f in b["f_Hz"]]
    r = np.array(b["r"])
    s12 = [_s12(v, dec, s, cfg.gamma) for v, s in zip(r, seqs)]
    write_csv(out / "psd.csv", {"f_Hz": b["f_Hz"], "r": r,
                                "r_err_model": (1 - r**2) / math.sqrt(b["shots"]),
                                "S12_nT2_per_Hz": s12}, cfg.seed)
    return {"S12_nT2_per_Hz": s12}


@command("driven")
def driven(cfg: RunConfig, out: Path):
    b = cfg.block("driven")
    if b["configuration"] not in (CORRELATION, ANTICORRELATION):
        raise ConfigError("driven.configuration",
                          f"must be {CORRELATION!r} or {ANTICORRELATION!r}")
    sr1, sr2 = _readout(cfg)
    m1, m2 = ReadoutModel.symmetric_for_sigma(sr1), ReadoutModel.symmetric_for_sigma(sr2)
    theta = np.linspace(b["theta_start_rad"], b["theta_stop_rad"], b["n_points"])
    sign = -1.0 if b["configuration"] == ANTICORRELATION else 1.0
    results = []
    for i, th in enumerate(theta):
        rec = simulate_driven_experiment(th, b["shots"], m1, m2, b["configuration"],
                                         (cfg.seed, i))
        results.append(pearson_estimate(rec))
        if b["dump_shots"] and i == 0:
            write_csv(out / "shots.csv", {"shot": np.arange(rec.M), "s1": rec.s1,
                                          "s2": rec.s2, "config": [rec.config] * rec.M},
                      cfg.seed)
    r = np.array([x.r for x in results])
    err = np.array([x.stderr for x in results])
    theory = sign * driven_theory(theta, sr1, sr2)
    write_csv(out / "driven.csv", {"theta_rad": theta, "r": r, "stderr": err,
                                   "r_theory": theory}, cfg.seed)
    write_json(out / "pearson.json", {"results": [x.to_dict() for x in results]}, cfg.seed)
    return {"reduced_chi2_vs_theory": float(np.mean(((r - theory) / err)**2)),
            "r_ceiling_theory": 1 / (sr1 * sr2), "r_at_first_theta": float(r[0])}


@command("sensitivity")
def sensitivity(cfg: RunConfig, out: Path):
    b = cfg.block("sensitivity")
    sr1, sr2 = _readout(cfg)
    T = np.geomspace(b["T_start_s"], b["T_stop_s"], b["n_points"])
    res = sensitivity_minimum_field(b["t_init_s"], b["t_sense_s"], b["t_read_s"],
                                    sr1, sr2, b["c1"], b["c2"], b["w"], T, cfg.gamma)
    write_csv(out / "sensitivity.csv",
              {"T_total_s": res.T_total, "repetitions": res.repetitions,
               "sigma_B_min_T": res.sigma_B_min,
               "sensitivity_T_Hz_m1_4": res.sensitivity}, cfg.seed)
    slope = np.polyfit(np.log(T), np.log(res.sigma_B_min), 1)[0] if len(T) > 1 else None
    return {"loglog_slope": slope, "sigma_B_min_first_T": float(res.sigma_B_min[0]),
            "sigma_B_min_last_T": float(res.sigma_B_min[-1])}


def _fit_correlated(cfg, b, out):
    q = cfg.block("qme", need=("gamma1_per_s", "gamma2_per_s"))
    sr1, sr2 = _readout(cfg)
    if not b.get("delta1_Hz") or len(b["delta1_Hz"]) != len(b["data"]):
        raise ConfigError("fit.delta1_Hz", "one detuning per data file is required")
    datasets = []
    for path, f_det in zip(b["data"], b["delta1_Hz"]):
        cols = read_csv(path)
        for need in ("t_s", "r"):
            if need not in cols:
                raise ConfigError("fit.data", f"{path} lacks column {need!r}")
        datasets.append({"delta1": 2 * np.pi * f_det, "t": cols["t_s"], "r": cols["r"],
                         "r_err": cols.get("r_err")})
    known = {"Gamma1": q["gamma1_per_s"], "Gamma2": q["gamma2_per_s"],
             "delta2": 2 * np.pi * q["delta2_Hz"], "sigma_r1": sr1, "sigma_r2": sr2}
    init = cfg.blocks.get("fit.init") or None
    res = fit_correlated_t1(datasets, known, init=init, seed=cfg.seed)
    body = res.result.to_dict()
    if 0.0 in b["delta1_Hz"]:
        local = extract_local_dephasing(dict(zip(b["delta1_Hz"], res.gd_tot)), 0.0)
        body["local_dephasing"] = {"gd22_per_s": local.gd22,
                                   "gd11_per_s": list(local.gd11.values()),
                                   "unphysical": list(local.unphysical.values())}
    write_json(out / "fit.json", body, cfg.seed)
    return {"r0": res.r0, "gd12_per_s": res.gd12, "gd_tot_per_s": res.gd_tot,
            "sse": res.result.residual_sse}


@command("fit")
def fit(cfg: RunConfig, out: Path):
    b = cfg.block("fit")
    if b["model"] == "correlated_t1":
        return _fit_correlated(cfg, b, out)
    if len(b["data"]) != 1:
        raise ConfigError("fit.data", "single-model fits take exactly one data file")
    free = {k: tuple(v) for k, v in cfg.blocks.get("fit.free", {}).items()}
    try:
        spec = ModelSpec(b["model"], dict(cfg.blocks.get("fit.fixed", {})), free, b["n_terms"])
    except ValueError as exc:
        raise ConfigError("fit", str(exc)) from None
    cols = read_csv(b["data"][0])
    for need in ("x", "y"):
        if need not in cols:
            raise ConfigError("fit.data", f"{b['data'][0]} lacks column {need!r}")
    res = fit_model(spec, cols["x"], cols["y"], cols.get("y_err"),
                    init=cfg.blocks.get("fit.init") or None, seed=cfg.seed)
    write_json(out / "fit.json", res.to_dict(), cfg.seed)
    best = {k: v for k, (v, _) in res.params.items()}
    write_csv(out / "fit_curve.csv", {"x": cols["x"], "y": cols["y"],
                                      "y_model": spec.evaluate(cols["x"], best)}, cfg.seed)
    return {"params": res.to_dict()["params"], "sse": res.residual_sse,
            "converged": res.converged}


def run_command(name: str, cfg: RunConfig, out_dir) -> dict:
    """Run subcommand ``name``; returns its summary (also written to summary.json)."""
    if name not in COMMANDS:
        raise ConfigError("command", f"unknown subcommand {name!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(
        f"# covmag {__version__} seed={cfg.seed}\n" + cfg.to_ini())
    summary = COMMANDS[name](cfg, out)
    write_json(out / "summary.json", {"command": name, "seed": cfg.seed, **summary}, cfg.seed)
    return summary


def _parser():
    p = argparse.ArgumentParser(prog="covmag", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"covmag {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, help="master seed, overrides [run] seed")
    p.add_argument("--threads", help="worker threads: a positive integer or 'auto'")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(args.seed, args.threads)
        run_command(args.command, cfg, out)
    except Exception as exc:  # reported as JSON, never as a traceback
        err = {"error": type(exc).__name__, "message": str(exc),
               "key_path": getattr(exc, "key_path", None), "command": args.command}
        text = to_json(err)
        print(text, file=sys.stderr)
        if out.is_dir():
            (out / "error.json").write_text(text + "\n")
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
