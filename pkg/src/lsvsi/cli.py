"""Command-line interface.

Every subcommand accepts ``--case``, ``--out``, ``--seed`` and ``--config``
(a JSON file holding :class:`~lsvsi.harness.ScenarioConfig` fields); flags
override config values.  ``monitor`` exits with status 1 when an onset alarm
fired, 0 otherwise; errors exit with status 3.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import IndexSeries, cti, dvsi, lti_series, nli, write_index_series
from .case import BusKind, build_admittance
from .continuation import CPFOptions, EventKind, find_snbp, resample, trace_pv_curve
from .harness import (PRESETS, ScenarioConfig, ScenarioError, lsvsi_rows,
                      measure_points, monitor_stream, noise_study, run_scenario,
                      write_lsvsi, write_noise_table)
from .measurements import read_stream
from .monitor import AlarmKind, write_alarms
from .plotting import render_plot
from .powerflow import PFOptions, solve_power_flow

log = logging.getLogger("lsvsi")

ONSET_EXIT = 1
ERROR_EXIT = 3


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--case", default=default, help="bundled case name or MATPOWER file path")
    p.add_argument("--out", default=default, help="output file or directory")
    p.add_argument("--seed", type=int, default=default, help="master random seed")
    p.add_argument("--config", default=default, help="JSON scenario config")
    return p


def _event(text: str) -> dict:
    # kind:target@lambda, e.g. line_outage:20@2.05 or shunt_switch:10:0.19@1.5
    try:
        head, lam = text.rsplit("@", 1)
        parts = head.split(":")
        ev = dict(kind=EventKind(parts[0]).value, target=int(parts[1]), at_lambda=float(lam))
        if len(parts) > 2:
            ev["delta_b"] = float(parts[2])
        return ev
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"bad event {text!r}; expected kind:target@lambda")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsvsi", parents=[_global_flags(False)],
                                     description="Local voltage stability monitoring toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    g = [_global_flags(True)]

    def case_opts(p):
        p.add_argument("--zip", type=float, nargs=6, metavar="C",
                       help="ZIP coefficients ap bp gp aq bq gq applied to every load")
        p.add_argument("--preset", choices=sorted(PRESETS))

    p = sub.add_parser("pf", parents=g, help="solve one power flow")
    case_opts(p)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--q-limits", action="store_true")

    p = sub.add_parser("cpf", parents=g, help="trace the PV curve to the nose")
    case_opts(p)
    p.add_argument("--lambda-start", type=float)
    p.add_argument("--event", type=_event, action="append", default=None,
                   help="kind:target@lambda (repeatable)")
    p.add_argument("--dlam", type=float, help="resample the trace on a uniform grid")

    p = sub.add_parser("lsvsi", parents=g, help="LS-VSI from a stream or along a CPF trace")
    case_opts(p)
    p.add_argument("--stream", help="measurement CSV")
    p.add_argument("--bus", type=int, action="append")
    p.add_argument("--normalization", choices=["refreshed", "stale"])

    p = sub.add_parser("baseline", parents=g, help="LTI / CTI / NLI / D-VSI")
    case_opts(p)
    p.add_argument("--kind", choices=["lti", "cti", "nli", "dvsi"], required=True)
    p.add_argument("--stream", help="measurement CSV (not for cti)")
    p.add_argument("--bus", type=int, action="append")
    p.add_argument("--window", type=int, help="LTI window / filter window")

    p = sub.add_parser("monitor", parents=g, help="LD-VSI alarm monitor (exit 1 on onset)")
    case_opts(p)
    p.add_argument("--stream", help="measurement CSV; default samples the CPF trace")
    p.add_argument("--bus", type=int, action="append")
    p.add_argument("--window", type=int, help="filter window T in samples")
    p.add_argument("--hysteresis", type=int)
    p.add_argument("--collapse-threshold", type=float)
    p.add_argument("--sigma-vm", type=float, help="voltage magnitude noise (p.u.)")
    p.add_argument("--sigma-va", type=float, help="phase angle noise (degrees)")

    p = sub.add_parser("scenario", parents=g, help="run a full scenario and write artifacts")
    case_opts(p)
    p.add_argument("--event", type=_event, action="append", default=None)
    p.add_argument("--bus", type=int, action="append")

    p = sub.add_parser("noise-study", parents=g, help="Monte-Carlo spread of LS-VSI/LTI/CTI")
    case_opts(p)
    p.add_argument("--trials", type=int, default=150)
    p.add_argument("--bus", type=int)
    p.add_argument("--sigma-vm", type=float, default=0.001)
    p.add_argument("--sigma-va", type=float, nargs="+", default=[0.01, 0.05, 0.5])

    p = sub.add_parser("plot", parents=g, help="SVG line plot from a CSV file")
    p.add_argument("csv")
    p.add_argument("--columns", nargs="+", required=True, help="x column then y columns")
    p.add_argument("--group", help="column splitting rows into series")
    p.add_argument("--title")
    return parser


def scenario_config(args, default_preset: str | None = None) -> ScenarioConfig:
    """Defaults < preset < --config file < command-line flags."""
    data: dict = {}
    if default_preset and not (getattr(args, "preset", None) or args.config or args.case):
        data.update(PRESETS[default_preset])
    if getattr(args, "preset", None):
        data.update(PRESETS[args.preset])
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    if args.case:
        data["case"] = args.case
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "zip", None):
        data["zip"] = list(args.zip)
    if getattr(args, "bus", None):
        data["monitored_buses"] = args.bus if isinstance(args.bus, list) else [args.bus]
    if getattr(args, "event", None):
        data["events"] = args.event
    if getattr(args, "lambda_start", None) is not None:
        data["lambda_start"] = args.lambda_start
    if getattr(args, "normalization", None):
        data["normalization"] = args.normalization
    if getattr(args, "hysteresis", None) is not None:
        data["hysteresis"] = args.hysteresis
    if getattr(args, "collapse_threshold", None) is not None:
        data["collapse_threshold"] = args.collapse_threshold
    if getattr(args, "window", None) is not None:
        if args.command == "baseline":
            data["lti_window"] = args.window
        data["filter"] = {**data.get("filter", {}), "window_samples": args.window}
    if args.command == "monitor" and (args.sigma_vm or args.sigma_va):
        data["noise"] = dict(sigma_v_mag=args.sigma_vm or 0.0, sigma_v_angle=args.sigma_va or 0.0)
    if args.out and args.command == "scenario":
        data["output_dir"] = args.out
    return ScenarioConfig.from_dict(data)


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _stream_or_trace(args, cfg: ScenarioConfig):
    """Measurement lists per bus, from ``--stream`` or sampled along the CPF trace."""
    if getattr(args, "stream", None):
        with open(args.stream) as fh:
            ms = read_stream(fh)
        if not ms:
            raise ValueError("measurement stream is empty")
        return {ms[0].bus: ms}
    from .harness import trace_scenario
    trace = trace_scenario(cfg)
    if cfg.dlam is not None:
        trace = resample(trace, cfg.dlam)
    noise = cfg.noise_model()
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.monitored_buses))
    return {b: measure_points(trace.points, b, noise, np.random.default_rng(s))
            for b, s in zip(cfg.monitored_buses, seeds)}


def cmd_pf(args) -> int:
    cfg = scenario_config(args)
    case = cfg.load()
    sol = solve_power_flow(case, args.lam, PFOptions(enforce_q_limits=args.q_limits),
                           direction=cfg.direction())
    if not sol.converged:
        print(f"power flow did not converge at lam={args.lam} "
              f"(mismatch {sol.max_mismatch:.3g})", file=sys.stderr)
        return ERROR_EXIT
    lines = ["bus,v_mag,v_ang_deg"]
    for bus, v in zip(sol.bus_ids, sol.voltage):
        lines.append(f"{bus},{float(abs(v))!r},{float(np.degrees(np.angle(v)))!r}")
    _emit("\n".join(lines) + "\n", args.out)
    print(f"converged in {sol.iterations} iterations", file=sys.stderr)
    return 0


def cmd_cpf(args) -> int:
    cfg = scenario_config(args)
    trace = trace_pv_curve(cfg.load(), cfg.direction(), cfg.event_list(),
                           CPFOptions(lambda_start=cfg.lambda_start))
    out = resample(trace, args.dlam) if args.dlam else trace
    _emit(out.to_csv(), args.out)
    try:
        print(f"lambda_snbp={find_snbp(trace)!r}", file=sys.stderr)
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
    return 0


def cmd_lsvsi(args) -> int:
    cfg = scenario_config(args)
    if not args.stream:
        cfg.dlam = None
    rows = []
    for bus, ms in _stream_or_trace(args, cfg).items():
        rows += lsvsi_rows(ms, cfg.normalization)
    _emit(write_lsvsi(rows), args.out)
    return 0


def cmd_baseline(args) -> int:
    cfg = scenario_config(args)
    series = []
    if args.kind == "cti":
        if args.stream:
            raise ValueError("cti needs the full network state; use --case instead of --stream")
        from .harness import trace_scenario
        trace = trace_scenario(cfg)
        for bus in cfg.monitored_buses:
            axis, vals = [], []
            for p in trace.points:
                if p.case.bus(bus).kind is not BusKind.PQ:
                    raise ValueError(f"bus {bus} is not a load bus")
                axis.append(p.lam)
                vals.append(cti(p.solution.voltage, build_admittance(p.case), p.case, bus))
            series.append(IndexSeries("cti", bus, axis, vals))
    else:
        if args.kind == "dvsi" and not args.stream:
            cfg.dlam = None
        for bus, ms in _stream_or_trace(args, cfg).items():
            if args.kind == "lti":
                series.append(lti_series(ms, cfg.lti_window))
            elif args.kind == "dvsi":
                series.append(IndexSeries("dvsi", bus, [m.axis for m in ms], [dvsi(m) for m in ms]))
            else:
                axis = np.array([m.axis for m in ms])
                p = np.array([-m.injection().real for m in ms])
                vm = np.array([abs(m.v_phasor) for m in ms])
                series.append(nli(axis, p, vm, cfg.filter_config(), bus))
    _emit(write_index_series(series), args.out)
    return 0


def cmd_monitor(args) -> int:
    cfg = scenario_config(args)
    events = []
    for bus, ms in _stream_or_trace(args, cfg).items():
        _, _, alarms = monitor_stream(ms, cfg.filter_config(), cfg.hysteresis,
                                      cfg.collapse_threshold, cfg.normalization)
        events += alarms
    _emit(write_alarms(events), args.out)
    fired = [e for e in events if e.kind is AlarmKind.ONSET]
    for e in fired:
        print(f"onset at bus {e.bus}, axis {e.axis_value:.6g} (fired at {e.fired_at:.6g})",
              file=sys.stderr)
    return ONSET_EXIT if fired else 0


def cmd_scenario(args) -> int:
    cfg = scenario_config(args)
    out = run_scenario(cfg, cfg.output_dir or f"runs/{cfg.name}")
    s = out.manifest["summary"]
    print(json.dumps(s, sort_keys=True), file=sys.stderr)
    return 0


def cmd_noise_study(args) -> int:
    cfg = scenario_config(args, default_preset="ieee30_noise")
    levels = [(args.sigma_vm, a) for a in args.sigma_va]
    rows = noise_study(cfg, args.trials, levels, bus=args.bus)
    _emit(write_noise_table(rows), args.out)
    return 0


def cmd_plot(args) -> int:
    text = render_plot(args.csv, args.columns, group=args.group, title=args.title)
    _emit(text, args.out)
    return 0


COMMANDS = {"pf": cmd_pf, "cpf": cmd_cpf, "lsvsi": cmd_lsvsi, "baseline": cmd_baseline,
            "monitor": cmd_monitor, "scenario": cmd_scenario, "noise-study": cmd_noise_study,
            "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR_EXIT


if __name__ == "__main__":
    sys.exit(main())
