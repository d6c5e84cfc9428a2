"""
Monte-Carlo experiment orchestration: method dispatch, P_th sweeps,
rate/power tradeoff frontiers, CFAR calibration and result aggregation.

Random streams are derived from one master seed with a counter-based split
``SeedSequence(seed, spawn_key=(trial, stream))`` so that adding methods or
sweep points never changes the draws seen by existing ones.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import generate_channel
from .config import Scenario, snapshot
from .errors import ArchitectureError, InfeasibleError
from .fd_optimizer import (OptimizerOptions, fd_space, initial_precoder,
                           run_alg1, run_tradeoff)
from .hybrid import (design_pc_hybrid, hybrid_metrics, pc_match,
                     refine_digital, sensing_ok)
from .radar import (RDMap, beamform_and_divide, calibrate_cfar, detect_scene,
                    noise_only_fa, predict_rd_noise_var, qam_symbols, rd_transform,
                    synthesize_rx)
from .selection import (all_on_design, brute_force_search, fc_candidate,
                        fc_candidate_sweep, greedy_search, random_selection)

SCHEMA_VERSION = 1

STREAM_CHANNEL = 0
STREAM_SENSE = 1
STREAM_METHOD = 2
STREAM_SCENE = 3

METHODS = {
    "fd": ("proposed", "greedy", "brute", "random", "all-on"),
    "fc": ("proposed", "random", "all-on"),
    "pc": ("proposed", "greedy", "brute", "random", "all-on"),
}


def stream_seed(master: int, trial: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(trial, stream))


def check_method(arch: str, method: str) -> None:
    if arch not in METHODS:
        raise ArchitectureError(f"unknown architecture {arch!r}")
    if method not in METHODS[arch]:
        raise ValueError(f"method {method!r} is not available for architecture {arch!r}")


@dataclass
class MethodResult:
    method: str
    rate: float
    power: float
    n_active: int
    mask: list
    precoder: np.ndarray      # effective fully-digital precoder
    runtime_s: float
    trace: object = None

    @property
    def ee(self) -> float:
        return self.rate / self.power


def _pc_from_search(scn: Scenario, H, res, options):
    cfg = scn.cfg
    m = pc_match(res.design.precoder.stacked(), cfg.n_rf, cfg.n_sub, p_tx=cfg.p_tx_w)
    hp = refine_digital(m.precoder, cfg, H, options)
    if not sensing_ok(hp, cfg):
        raise InfeasibleError("factorized precoder violates the beam-power floor")
    return hp


def _random_fc(scn, H, options, seed, max_draws=50):
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        n = int(rng.integers(1, scn.cfg.n_rf + 1))
        try:
            return fc_candidate(scn.cfg, H, n, options)
        except InfeasibleError:
            continue
    raise InfeasibleError("no feasible random candidate")


def run_method(scn: Scenario, H, method: str, options: OptimizerOptions | None = None,
               seed=0) -> MethodResult:
    """Run one design method on one channel draw."""
    cfg = scn.cfg
    arch = cfg.architecture
    check_method(arch, method)
    options = options or OptimizerOptions()
    t0 = time.perf_counter()
    trace = None
    if arch == "fd":
        if method == "proposed":
            r = run_alg1(cfg, H, options)
            trace = r.trace
        elif method == "greedy":
            r = greedy_search(cfg, H, "fd", options, seed).design
        elif method == "brute":
            r = brute_force_search(cfg, H, "fd", options).design
        elif method == "random":
            r = random_selection(cfg, H, "fd", options, seed).design
        else:
            r = all_on_design(cfg, H, "fd", options).design
        out = (r.rate, r.power, r.mask.count, r.mask.active.tolist(), np.asarray(r.precoder.mats))
    else:
        if arch == "fc":
            if method == "proposed":
                hr = fc_candidate_sweep(cfg, H, options).design
                hp, trace = hr.precoder, hr.trace
            elif method == "random":
                hp = _random_fc(scn, H, options, seed).precoder
            else:
                hp = fc_candidate(cfg, H, cfg.n_rf, options).precoder
        else:
            if method == "proposed":
                hr = design_pc_hybrid(cfg, H, options)
                hp, trace = hr.precoder, hr.trace
            else:
                search = {"greedy": lambda: greedy_search(cfg, H, "pc", options, seed),
                          "brute": lambda: brute_force_search(cfg, H, "pc", options),
                          "random": lambda: random_selection(cfg, H, "pc", options, seed),
                          "all-on": lambda: all_on_design(cfg, H, "pc", options)}[method]()
                hp = _pc_from_search(scn, H, search, options)
        rate, power = hybrid_metrics(hp, cfg, H)
        out = (rate, power, hp.mask.count, hp.mask.active.tolist(), hp.effective())
    rt = time.perf_counter() - t0
    return MethodResult(method, out[0], out[1], out[2], out[3], out[4], rt, trace)


def trial_channel(scn: Scenario, seed: int, trial: int):
    return generate_channel(scn.cfg, scn.cluster, stream_seed(seed, trial, STREAM_CHANNEL))


def sense(scn: Scenario, F, seed: int, trial: int, n_sense: int):
    """Detection estimate for one precoder; draws are shared across methods."""
    rng = np.random.default_rng(stream_seed(seed, trial, STREAM_SCENE))
    scene = scn.scene_for_trial(rng)
    return detect_scene(F, scene, scn.grid, scn.cfar, scn.cfg,
                        stream_seed(seed, trial, STREAM_SENSE), n_sense)


# ---------------------------------------------------------------------------
# result files


def _write_run(out: Path, rec: dict) -> None:
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    name = f"{rec['method']}_pth{rec['p_th']:.6g}_t{rec['trial']:04d}.json"
    (runs / name).write_text(json.dumps(rec, indent=1, sort_keys=True))


def _run_record(scn, method, p_th, trial, seed, res: MethodResult | None, est, err=None):
    rec = {"schema_version": SCHEMA_VERSION, "arch": scn.cfg.architecture,
           "method": method, "p_th": float(p_th), "trial": int(trial), "seed": int(seed),
           "feasible": res is not None}
    if res is not None:
        rec.update(ee=res.ee, rate=res.rate, power=res.power, n_active=res.n_active,
                   mask=[int(b) for b in res.mask], runtime_s=res.runtime_s)
    if est is not None:
        rec.update(p_d=est.p_d, hits=est.hits, sense_trials=est.n_trials,
                   n_targets=len(scn.scene), p_fa=est.p_fa)
    if err is not None:
        rec["error"] = err
    return rec


def run_point(scn: Scenario, method: str, p_th: float, trial: int, seed: int,
              options=None, n_sense: int = 20):
    """One (method, P_th, trial) evaluation; returns ``(record, trace)``."""
    s = scn.with_pth(p_th)
    H = trial_channel(s, seed, trial)
    try:
        res = run_method(s, H, method, options, stream_seed(seed, trial, STREAM_METHOD))
    except InfeasibleError as exc:
        return _run_record(s, method, p_th, trial, seed, None, None, str(exc)), None
    est = sense(s, res.precoder, seed, trial, n_sense) if n_sense > 0 else None
    return _run_record(s, method, p_th, trial, seed, res, est), res.trace


def _point(args):
    return run_point(*args)


def _write_trace(out: Path, rec: dict, trace) -> None:
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    trace.to_jsonl(tdir / f"{rec['method']}_pth{rec['p_th']:.6g}_t{rec['trial']:04d}.jsonl")


def sweep(scn: Scenario, methods, pth_grid, trials: int, seed: int,
          out=None, options=None, n_sense: int = 20, workers: int = 1, progress=None):
    """All (P_th, method, trial) combinations; returns run records and summary rows.

    Points are dispatched to a process pool when ``workers > 1``; all files
    are written by the calling process.
    """
    for m in methods:
        check_method(scn.cfg.architecture, m)
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(snapshot(scn))
    jobs = [(scn, m, float(p), t, seed, options, n_sense)
            for p in pth_grid for t in range(trials) for m in methods]
    if workers > 1:
        pool = ProcessPoolExecutor(workers)
        results = pool.map(_point, jobs)
    else:
        pool = None
        results = map(_point, jobs)
    records = []
    try:
        for rec, trace in results:
            records.append(rec)
            if out is not None:
                _write_run(out, rec)
                if trace is not None:
                    _write_trace(out, rec, trace)
            if progress:
                progress(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    rows = summarize(records)
    if out is not None:
        write_csv(rows, out / "aggregate.csv")
    return records, rows


def _ci(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


SUMMARY_FIELDS = ["schema_version", "arch", "method", "p_th", "n_runs", "n_infeasible",
                  "mean_ee", "ci_ee", "mean_se", "mean_power", "mean_n_active",
                  "ci_n_active", "mean_pd", "ci_pd"]


def summarize(records) -> list:
    """Per-(P_th, method) means with 95% confidence half-widths."""
    versions = {r.get("schema_version") for r in records}
    if len(versions) > 1:
        raise ValueError(f"mixed schema versions {sorted(map(str, versions))}")
    groups = {}
    for r in records:
        groups.setdefault((r["p_th"], r["method"], r["arch"]), []).append(r)
    rows = []
    for (p_th, method, arch) in sorted(groups):
        rs = sorted(groups[(p_th, method, arch)], key=lambda r: r["trial"])
        ok = [r for r in rs if r["feasible"]]
        row = {"schema_version": SCHEMA_VERSION, "arch": arch, "method": method,
               "p_th": p_th, "n_runs": len(rs), "n_infeasible": len(rs) - len(ok)}
        if ok:
            ee = [r["ee"] for r in ok]
            na = [r["n_active"] for r in ok]
            row.update(mean_ee=float(np.mean(ee)), ci_ee=_ci(ee),
                       mean_se=float(np.mean([r["rate"] for r in ok])),
                       mean_power=float(np.mean([r["power"] for r in ok])),
                       mean_n_active=float(np.mean(na)), ci_n_active=_ci(na))
            sensed = [r for r in ok if r.get("p_d") is not None]
            if sensed:
                # every run senses the same number of targets, so the pooled
                # binomial proportion equals the mean of the per-run rates
                pd = float(np.mean([r["p_d"] for r in sensed]))
                n = sum(r["sense_trials"] * r.get("n_targets", 1) for r in sensed)
                row.update(mean_pd=pd, ci_pd=float(1.96 * np.sqrt(pd * (1 - pd) / n)))
        rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows, path, fields=None) -> None:
    fields = fields or SUMMARY_FIELDS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f)) for f in fields])
    Path(path).write_text(buf.getvalue())


def load_runs(results_dir) -> list:
    files = sorted(Path(results_dir).glob("runs/*.json"))
    if not files:
        raise FileNotFoundError(f"no run files under {results_dir}")
    return [json.loads(f.read_text()) for f in files]


def aggregate(results_dir, out_csv=None) -> list:
    """Recompute the summary from the per-run files of a results directory."""
    rows = summarize(load_runs(results_dir))
    write_csv(rows, out_csv or Path(results_dir) / "aggregate.csv")
    return rows


# ---------------------------------------------------------------------------
# tradeoff frontier and CFAR calibration


FRONTIER_FIELDS = ["schema_version", "arch", "omega_ratio", "n_runs", "mean_se",
                   "mean_power", "mean_ee", "mean_n_active"]


def tradeoff(scn: Scenario, omega_ratios, trials: int, seed: int, out=None, options=None):
    """Rate/power frontier for weights ``(1, r)`` over the given ratios ``r``."""
    if scn.cfg.architecture != "fd":
        raise ArchitectureError("the tradeoff frontier is defined for the FD array")
    rows = []
    for r in sorted(float(x) for x in omega_ratios):
        se, pw, na = [], [], []
        for trial in range(trials):
            H = trial_channel(scn, seed, trial)
            res = run_tradeoff(scn.cfg, H, 1.0, r, options)
            se.append(res.rate)
            pw.append(res.power)
            na.append(res.mask.count)
        rows.append({"schema_version": SCHEMA_VERSION, "arch": "fd", "omega_ratio": r,
                     "n_runs": trials, "mean_se": float(np.mean(se)),
                     "mean_power": float(np.mean(pw)),
                     "mean_ee": float(np.mean(np.array(se) / np.array(pw))),
                     "mean_n_active": float(np.mean(na))})
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(snapshot(scn))
        write_csv(rows, out / "frontier.csv", FRONTIER_FIELDS)
    return rows


def cfar_calibration(scn: Scenario, trials: int, seed: int, theta=None):
    """Closed-form and Monte-Carlo-calibrated false-alarm rates on noise-only maps.

    The precoder is the feasible fully-digital initialization on the first
    channel draw. Calibration and validation use independent streams.
    """
    cfg = scn.cfg
    H = trial_channel(scn, seed, 0)
    F = initial_precoder(fd_space(cfg, H, relaxed=False))
    if theta is None:
        theta = cfg.theta_targets[0] if cfg.theta_targets else 0.0
    cells_per = cfg.n_sub * cfg.n_sym
    fa0, n0 = noise_only_fa(F, theta, scn.cfar, cfg, stream_seed(seed, 0, 10), trials)
    cal = calibrate_cfar(F, theta, scn.cfar, cfg, stream_seed(seed, 0, 11), trials)
    fa1, n1 = noise_only_fa(F, theta, cal, cfg, stream_seed(seed, 0, 12), trials)
    p = cfg.p_fa
    sig = np.sqrt(p * (1 - p) / n1)
    return {"schema_version": SCHEMA_VERSION, "p_fa": p, "cells": n1,
            "cells_per_map": cells_per, "trials": trials,
            "closed_form_scale": scn.cfar.alpha(cfg.n_sub, cfg.n_sym),
            "closed_form_fa": fa0 / n0, "calibrated_scale": cal.scale,
            "calibrated_fa": fa1 / n1, "sigma": float(sig),
            "within_3sigma": bool(abs(fa1 / n1 - p) <= 3 * sig)}


def rd_snapshot(scn: Scenario, F, seed: int, trial: int = 0) -> RDMap:
    """RD map of one sensing realization, beamformed toward the first target."""
    cfg = scn.cfg
    rng = np.random.default_rng(stream_seed(seed, trial, STREAM_SCENE))
    scene = scn.scene_for_trial(rng)
    rng = np.random.default_rng(stream_seed(seed, trial, STREAM_SENSE))
    s = qam_symbols(rng, (cfg.n_sub, cfg.n_sym, cfg.n_cols))
    y = synthesize_rx(F, s, scene, cfg, rng)
    theta = scene.angles[0] if len(scene) else 0.0
    div = beamform_and_divide(y, F, s, [theta], cfg)
    pred = predict_rd_noise_var(div.proj[0], div.alpha[0], cfg, div.valid[0])
    return RDMap(rd_transform(div.z[0]), theta, pred, float(div.alpha[0]))
