"""Command-line front end.

Every command writes its outputs plus a ``manifest.json`` (command, parameters,
input and output digests) into the output directory. Outputs are removed
again if the command fails part-way.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import read_calibrations, write_calibrations
from .drift import MODES, read_corrections, run_mode
from .kernels import KernelSpec
from .metrics import EvalMask, align, mse, relative_mse
from .scheduler import ScheduleConfig
from .simulate import (
    calibrate_near,
    default_scenario,
    generate,
    load_scenario,
    run_correction_sweep,
    run_schedule_sim,
)
from .timesync import PiecewiseOffset, apply_offset, estimate_offsets, fit_offset_model

log = logging.getLogger("driftgp")

OUT_ENV = "DRIFTGP_OUTPUT_DIR"


# -- csv helpers ----------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_columns(path, required) -> dict:
    """Read a headered CSV into float arrays, checking the required columns."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise ValueError(f"{path}:1: missing column(s) {missing}")
        cols = {c: [] for c in header}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for c, v in zip(header, row):
                try:
                    cols[c].append(float(v))
                except ValueError:
                    cols[c].append(v)
    out = {}
    for c, vals in cols.items():
        try:
            out[c] = np.asarray(vals, dtype=float)
        except (TypeError, ValueError):
            out[c] = np.asarray(vals, dtype=object)
    if not out or out[header[0]].size == 0:
        raise ValueError(f"{path}: no data rows")
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Outputs:
    """Track files written by a command; delete them all if the command fails."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass

    def manifest(self, command: str, params: dict, inputs=()) -> None:
        doc = {
            "command": command,
            "version": __version__,
            "params": params,
            "inputs": {Path(p).name: _sha256(p) for p in inputs},
            "outputs": {p.name: _sha256(p) for p in self.files},
        }
        path = self.path("manifest.json")
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- argument plumbing -------------------------------------------------------------


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _unit(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _count(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_kernel_flags(p) -> None:
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel", choices=("rbf", "rq", "matern"), default="matern", help="kernel family (default: matern)")
    g.add_argument("--length", type=_positive, default=200.0, help="characteristic length in hours (default: 200)")
    g.add_argument("--nu", choices=("0.5", "1.5", "2.5"), default="1.5", help="Matern smoothness (default: 1.5)")
    g.add_argument("--rq-alpha", type=_positive, default=1.0, help="rational quadratic shape parameter (default: 1)")


def _kernel(args) -> KernelSpec:
    return KernelSpec(family=args.kernel, length=args.length, nu=float(args.nu), alpha=args.rq_alpha)


def _kernel_params(k: KernelSpec) -> dict:
    return {"family": k.family, "length": k.length, "nu": k.nu, "alpha": k.alpha}


def _scenario(args):
    scn = load_scenario(args.scenario) if args.scenario else default_scenario()
    if args.seed is not None:
        scn = scn.with_seed(args.seed)
    return scn


# -- commands ----------------------------------------------------------------------


def cmd_gen_data(args, out: Outputs):
    scn = _scenario(args)
    data = generate(scn)
    write_table(out.path("reference.csv"), ("t_hours", "y"), zip(data.t, data.reference))
    for s in data.sensors:
        write_table(
            out.path(f"{s.name}.csv"),
            ("t_hours", "signal", "valid", "beta0_true", "beta1_true"),
            zip(s.t, s.signal, s.valid, s.beta0, s.beta1),
        )
    out.manifest("gen-data", {"seed": scn.seed, "scenario_sha256": scn.digest(), "scenario": scn.to_dict()})


def _sensor_inputs(path):
    cols = read_columns(path, ("t_hours", "signal"))
    valid = cols["valid"].astype(bool) if "valid" in cols else np.ones(cols["t_hours"].size, dtype=bool)
    return cols["t_hours"], cols["signal"], valid


def cmd_calibrate(args, out: Outputs):
    t, x, valid = _sensor_inputs(args.sensor)
    ref = read_columns(args.reference, ("t_hours", "y"))
    y = np.interp(t, ref["t_hours"], ref["y"]) if not np.array_equal(t, ref["t_hours"]) else ref["y"]
    first = args.first_time if args.first_time is not None else 0.0
    nominal = np.arange(first, t.max() + 1e-9, args.interval)
    if nominal.size == 0:
        nominal = np.array([first])
    cals, used = [], set()
    for tn in nominal:
        cal, k = calibrate_near(t, x, y, valid, float(tn), args.cycle_hours, args.low_count, args.high_count, used)
        if cal is None:
            log.warning("no usable cycle for calibration at %.3f h; skipped", tn)
            continue
        used.add(k)
        cals.append(cal)
    if not cals:
        raise ValueError("no calibration could be extracted from the inputs")
    cals.sort(key=lambda c: c.t)
    write_calibrations(out.path(args.name), cals)
    params = {k: getattr(args, k) for k in ("interval", "first_time", "cycle_hours", "low_count", "high_count")}
    out.manifest("calibrate", params, (args.sensor, args.reference))


def cmd_correct(args, out: Outputs):
    t, x, valid = _sensor_inputs(args.sensor)
    cals = read_calibrations(args.calibrations)
    if not cals:
        raise ValueError(f"{args.calibrations}: no calibrations")
    kern = _kernel(args)
    res = run_mode(args.mode, cals, kern, t, x, valid)
    res.write_csv(out.path(args.name))
    out.manifest("correct", {"mode": args.mode, "kernel": _kernel_params(kern)}, (args.sensor, args.calibrations))


def _labelled(spec: str):
    if "=" in spec:
        label, path = spec.split("=", 1)
        return label, path
    return Path(spec).stem, spec


def cmd_eval(args, out: Outputs):
    ref = read_columns(args.reference, ("t_hours", "y"))
    mask = EvalMask.parse(args.mask)
    rows, paths = [], []
    for spec in args.corrected:
        sensor, path = _labelled(spec)
        res = read_corrections(path)
        truth = align(res.t, ref["t_hours"], ref["y"])
        m = mse(res.y_hat, truth, t=res.t, mask=mask, valid=res.valid)
        rows.append([sensor, res.mode, m])
        paths.append(path)
    base = {r[0]: r[2] for r in rows if r[1] == "stepwise"}
    table = []
    for sensor, method, m in rows:
        b = base.get(sensor)
        rel = relative_mse(m, b) if b is not None and b > 0 else float("nan")
        interval = args.interval if args.interval is not None else ""
        table.append([sensor, method, interval, m, float(np.sqrt(m)), rel])
    write_table(out.path(args.name), ("sensor", "method", "interval", "mse", "rmse", "rel_mse"), table)
    out.manifest("eval", {"mask": [list(w) for w in mask.windows], "interval": args.interval}, [args.reference, *paths])


def cmd_sync(args, out: Outputs):
    t, x, _ = _sensor_inputs(args.sensor)
    ref = read_columns(args.reference, ("t_hours",))
    value_col = args.reference_column
    if value_col not in ref:
        raise ValueError(f"{args.reference}:1: missing column {value_col!r}")
    est = estimate_offsets(t, x, ref["t_hours"], ref[value_col], args.window, args.search_bound, args.grid_step)
    write_table(
        out.path("offsets.csv"),
        ("window_center_hours", "offset_s", "correlation"),
        ((e.window_center, e.offset, e.correlation) for e in est),
    )
    if args.breakpoints is not None or len(est) >= 2:
        model = fit_offset_model(est, args.breakpoints or ())
    elif est:
        model = PiecewiseOffset.constant(est[0].offset)
    else:
        raise ValueError("no window produced an offset estimate")
    shifted = apply_offset(ref["t_hours"], model)
    cols = [c for c in ref if c != "t_hours"]
    write_table(out.path("reference_synced.csv"), ("t_hours", *cols), zip(shifted, *(ref[c] for c in cols)))
    write_table(
        out.path("offset_model.csv"),
        ("segment", "upper_breakpoint_hours", "slope_s_per_hour", "intercept_s"),
        (
            (i, model.breakpoints[i] if i < len(model.breakpoints) else float("inf"), a, b)
            for i, (a, b) in enumerate(zip(model.slopes, model.intercepts))
        ),
    )
    params = {k: getattr(args, k) for k in ("window", "search_bound", "grid_step", "breakpoints", "reference_column")}
    out.manifest("sync", params, (args.sensor, args.reference))


def cmd_schedule_sim(args, out: Outputs):
    scn = _scenario(args)
    cfg = ScheduleConfig(alpha=args.alpha, initial_interval=args.interval, max_interval=args.max_interval)
    kern = _kernel(args)
    res = run_schedule_sim(scn, cfg, kern, reps=args.reps, eval_mode=args.eval_mode, mask=EvalMask.parse(args.mask))
    trace_cols = ("t_hours", "sensor_id", "interval_hours", "uncertainty", "calibrated_flag", "budget")
    for (rep, policy), trace in sorted(res.traces.items()):
        if rep == 0:
            write_table(out.path(f"trace_{policy}.csv"), trace_cols, ([r[c] for c in trace_cols] for r in trace))
    cols = ("rep", "policy", "sensor", "n_calibrations", "mse", "rmse")
    write_table(out.path("summary.csv"), cols, ([r[c] for c in cols] for r in res.rows))
    rel = res.fleet_relative_mse()
    write_table(out.path("fleet_relative_mse.csv"), ("rep", "relative_mse"), enumerate(rel))
    params = {
        "seed": scn.seed,
        "scenario_sha256": scn.digest(),
        "alpha": cfg.alpha,
        "initial_interval": cfg.initial_interval,
        "max_interval": cfg.max_interval,
        "update_period": cfg.update_period,
        "reps": args.reps,
        "eval_mode": args.eval_mode,
        "kernel": _kernel_params(kern),
    }
    out.manifest("schedule-sim", params)
    log.info("median fleet relative MSE (adaptive / fixed): %.4f", float(np.median(rel)))


def cmd_sweep(args, out: Outputs):
    scn = _scenario(args)
    kern = _kernel(args)
    res = run_correction_sweep(scn, [kern], args.intervals, args.reps, modes=(args.mode,), mask=EvalMask.parse(args.mask))
    cols = ("sensor", "interval", "rep", "method", "mse", "rel_mse", "n_calibrations")
    write_table(out.path("sweep_rows.csv"), cols, ([r[c] for c in cols] for r in res.rows))
    summ = res.summary("median")
    cols = ("sensor", "method", "interval", "mse", "rmse", "rel_mse")
    write_table(out.path("summary.csv"), cols, ([s[c] for c in cols] for s in summ))
    header, rows = res.table("median")
    write_table(out.path(f"drift_correction_{args.mode}_norm.csv"), header, rows)
    params = {
        "seed": scn.seed,
        "scenario_sha256": scn.digest(),
        "intervals": args.intervals,
        "reps": args.reps,
        "mode": args.mode,
        "kernel": _kernel_params(kern),
    }
    out.manifest("sweep", params)


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="driftgp",
        description="GP drift correction and calibration scheduling for sensor fleets. Times are in hours.",
        epilog=f"The default output directory is taken from ${OUT_ENV} when --out-dir is not given, else the current directory.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_, fn):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--out-dir", default=None, help=f"output directory (default: ${OUT_ENV} or .)")
        sp.set_defaults(fn=fn)
        return sp

    sp = command("gen-data", "generate a synthetic fleet (reference + one CSV per sensor)", cmd_gen_data)
    sp.add_argument("--scenario", help="scenario YAML file (default: built-in four-sensor fleet)")
    sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    sp = command("calibrate", "extract calibrations from a sensor CSV at a fixed cadence", cmd_calibrate)
    sp.add_argument("--sensor", required=True, help="sensor CSV with t_hours,signal[,valid]")
    sp.add_argument("--reference", required=True, help="reference CSV with t_hours,y")
    sp.add_argument("--interval", type=_positive, required=True, help="calibration interval in hours")
    sp.add_argument("--first-time", type=float, default=None, help="first nominal calibration time (default: 0)")
    sp.add_argument("--cycle-hours", type=_positive, default=5.0, help="saturation/anoxic cycle length (default: 5)")
    sp.add_argument("--low-count", type=int, choices=range(3, 7), default=6, metavar="{3..6}", help="low-level samples")
    sp.add_argument("--high-count", type=int, choices=range(3, 7), default=6, metavar="{3..6}", help="high-level samples")
    sp.add_argument("--name", default="calibrations.csv", help="output file name")

    sp = command("correct", "drift-correct a sensor CSV given its calibrations", cmd_correct)
    sp.add_argument("--sensor", required=True, help="sensor CSV with t_hours,signal[,valid]")
    sp.add_argument("--calibrations", required=True, help="calibration CSV")
    sp.add_argument("--mode", choices=MODES, default="offline", help="correction mode (default: offline)")
    sp.add_argument("--name", default="corrected.csv", help="output file name")
    _add_kernel_flags(sp)

    sp = command("eval", "score corrected CSVs against a reference", cmd_eval)
    sp.add_argument(
        "--corrected", nargs="+", required=True, metavar="[SENSOR=]CSV", help="corrected outputs; sensor defaults to the file stem"
    )
    sp.add_argument("--reference", required=True, help="reference CSV with t_hours,y")
    sp.add_argument("--mask", default=None, metavar="LO:HI,...", help="time windows excluded from scoring")
    sp.add_argument("--interval", type=_positive, default=None, help="calibration interval recorded in the table")
    sp.add_argument("--name", default="metrics.csv", help="output file name")

    sp = command("sync", "estimate the clock offset between a sensor and a reference", cmd_sync)
    sp.add_argument("--sensor", required=True, help="sensor CSV with t_hours,signal")
    sp.add_argument("--reference", required=True, help="reference CSV with t_hours and a value column")
    sp.add_argument("--reference-column", default="y", help="value column of the reference (default: y)")
    sp.add_argument("--window", type=_positive, default=5.0, help="window length in hours (default: 5)")
    sp.add_argument("--search-bound", type=_positive, default=200.0, help="offset search bound in seconds (default: 200)")
    sp.add_argument("--grid-step", type=_positive, default=2.0, help="offset grid step in seconds (default: 2)")
    sp.add_argument("--breakpoints", type=_float_list, default=None, metavar="H,...", help="segment breakpoints in hours")

    sp = command("schedule-sim", "adaptive versus fixed calibration scheduling on a synthetic fleet", cmd_schedule_sim)
    sp.add_argument("--scenario", help="scenario YAML file (default: built-in four-sensor fleet)")
    sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sp.add_argument("--interval", type=_positive, default=50.0, help="initial calibration interval (default: 50)")
    sp.add_argument("--alpha", type=_unit, default=0.1, help="learning rate in [0, 1] (default: 0.1)")
    sp.add_argument("--max-interval", type=_positive, default=None, help="longest allowed interval (default: 3x --interval)")
    sp.add_argument("--reps", type=_count, default=1, help="repetitions (default: 1)")
    sp.add_argument("--eval-mode", choices=("online", "offline"), default="online", help="correction used for scoring")
    sp.add_argument("--mask", default=None, metavar="LO:HI,...", help="time windows excluded from scoring")
    _add_kernel_flags(sp)

    sp = command("sweep", "correction accuracy over a grid of calibration intervals", cmd_sweep)
    sp.add_argument("--scenario", help="scenario YAML file (default: built-in four-sensor fleet)")
    sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sp.add_argument(
        "--intervals", type=_float_list, default=[float(v) for v in range(10, 101, 10)], metavar="H,...",
        help="calibration intervals in hours (default: 10,20,...,100)",
    )
    sp.add_argument("--interval", dest="intervals", type=lambda s: [_positive(s)], help="single interval (overrides --intervals)")
    sp.add_argument("--reps", type=_count, default=50, help="repetitions per interval (default: 50)")
    sp.add_argument("--mode", choices=("offline", "online"), default="offline", help="GP correction mode (default: offline)")
    sp.add_argument("--mask", default=None, metavar="LO:HI,...", help="time windows excluded from scoring")
    _add_kernel_flags(sp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "schedule-sim" and args.max_interval is not None and args.max_interval < args.interval:
        parser.error("--max-interval must be at least --interval")
    out_dir = Path(args.out_dir or os.environ.get(OUT_ENV) or ".")
    out = Outputs(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        args.fn(args, out)
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        out.cleanup()
        print(f"driftgp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.cleanup()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
