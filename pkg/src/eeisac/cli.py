"""
Command-line entry point.

Exit status is 0 on success, 2 when the scenario is infeasible and 1 for any
other error (bad configuration, unknown method, I/O failure).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import load_config, snapshot
from .errors import InfeasibleError

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _floats(text: str):
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _scenario_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=("setup1", "setup2"), default="setup1")
    src.add_argument("--config", type=Path, help="YAML scenario file")
    p.add_argument("--arch", choices=("fd", "fc", "pc"), default="fd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry, e.g. system.p_th=2")
    p.add_argument("--out", type=Path, help="results directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="eeisac", description="Energy-efficient ISAC precoding experiments")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="design a precoder for one channel draw")
    _scenario_args(p)
    p.add_argument("--method", default="proposed")
    p.add_argument("--trial", type=int, default=0, help="channel draw index")

    p = sub.add_parser("sense", help="design a precoder and estimate detection performance")
    _scenario_args(p)
    p.add_argument("--method", default="proposed")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--trials", type=int, default=100, help="sensing realizations")

    p = sub.add_parser("tradeoff", help="rate/power frontier over weight ratios")
    _scenario_args(p)
    p.add_argument("--omega-grid", type=_floats, default=[0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
                   help="comma-separated ratios omega2/omega1")
    p.add_argument("--trials", type=int, default=5)

    p = sub.add_parser("sweep", help="P_th sweep over methods and channel draws")
    _scenario_args(p)
    p.add_argument("--methods", default="proposed")
    p.add_argument("--method", dest="methods")
    p.add_argument("--pth-grid", type=_floats, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--sense-trials", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("calibrate-cfar", help="noise-only false-alarm calibration")
    _scenario_args(p)
    p.add_argument("--trials", type=int, default=1000, help="noise-only maps per stage")

    p = sub.add_parser("aggregate", help="rebuild the summary CSV from run files")
    p.add_argument("results_dir", type=Path)
    p.add_argument("--out", type=Path, help="output CSV (default: <dir>/aggregate.csv)")
    return ap


def _load(args):
    return load_config(args.config if args.config else args.preset, args.arch, args.overrides)


def _result_dict(scn, res) -> dict:
    return {"schema_version": harness.SCHEMA_VERSION, "arch": scn.cfg.architecture,
            "method": res.method, "p_th": scn.cfg.p_th, "ee": res.ee, "rate": res.rate,
            "power": res.power, "n_active": res.n_active,
            "mask": [int(b) for b in res.mask], "runtime_s": res.runtime_s}


def _save_design(out: Path, scn, res, info: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(snapshot(scn))
    (out / "result.json").write_text(json.dumps(info, indent=1, sort_keys=True))
    np.save(out / "precoder.npy", res.precoder)
    if res.trace is not None:
        res.trace.to_jsonl(out / "trace.jsonl")


def cmd_optimize(args) -> dict:
    scn = _load(args)
    H = harness.trial_channel(scn, args.seed, args.trial)
    res = harness.run_method(scn, H, args.method, None,
                             harness.stream_seed(args.seed, args.trial, harness.STREAM_METHOD))
    info = _result_dict(scn, res)
    if args.out:
        _save_design(args.out, scn, res, info)
    return info


def cmd_sense(args) -> dict:
    scn = _load(args)
    H = harness.trial_channel(scn, args.seed, args.trial)
    res = harness.run_method(scn, H, args.method, None,
                             harness.stream_seed(args.seed, args.trial, harness.STREAM_METHOD))
    est = harness.sense(scn, res.precoder, args.seed, args.trial, args.trials)
    info = _result_dict(scn, res)
    info.update(p_d=est.p_d, p_fa=est.p_fa, hits=est.hits, false_alarms=est.false_alarms,
                noise_cells=est.noise_cells, sense_trials=est.n_trials)
    if args.out:
        _save_design(args.out, scn, res, info)
        harness.rd_snapshot(scn, res.precoder, args.seed, args.trial).save(args.out / "rd_map")
    return info


def cmd_tradeoff(args):
    scn = _load(args)
    return harness.tradeoff(scn, args.omega_grid, args.trials, args.seed, args.out)


def cmd_sweep(args):
    scn = _load(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]

    def progress(rec):
        print(f"p_th={rec['p_th']:g} trial={rec['trial']} {rec['method']}: "
              + (f"ee={rec['ee']:.4g} n_active={rec['n_active']}" if rec["feasible"]
                 else "infeasible"), file=sys.stderr)

    records, rows = harness.sweep(scn, methods, args.pth_grid, args.trials, args.seed,
                                  args.out, None, args.sense_trials, args.workers, progress)
    if all(not r["feasible"] for r in records):
        raise InfeasibleError("every sweep point is infeasible")
    return rows


def cmd_calibrate(args) -> dict:
    scn = _load(args)
    info = harness.cfar_calibration(scn, args.trials, args.seed)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.yaml").write_text(snapshot(scn))
        (args.out / "cfar.json").write_text(json.dumps(info, indent=1, sort_keys=True))
    return info


def cmd_aggregate(args):
    return harness.aggregate(args.results_dir, args.out)


COMMANDS = {"optimize": cmd_optimize, "sense": cmd_sense, "tradeoff": cmd_tradeoff,
            "sweep": cmd_sweep, "calibrate-cfar": cmd_calibrate, "aggregate": cmd_aggregate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = COMMANDS[args.command](args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(out, indent=1, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
