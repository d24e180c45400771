"""Scenario runner, Monte-Carlo noise study and experiment persistence."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import (ConditioningError, IndexSeries, cti, dvsi, dvsi_raw, load_current,
                        lti, lti_series, nli, write_index_series)
from .case import BusKind, Case, build_admittance, builtin_case, load_case
from .continuation import (CPFOptions, Event, EventKind, PVTrace, resample,
                           trace_pv_curve)
from .measurements import (LocalMeasurement, NoiseModel, add_noise, extract_local,
                           perturb_phasors, write_stream)
from .monitor import AlarmKind, FilterConfig, detect_onset, ld_vsi, write_alarms
from .plotting import render_plot
from .powerflow import LoadingDirection, solve_power_flow
from .vsi import IllPosedBusError, evaluate, noload_reference

log = logging.getLogger(__name__)

ALL_INDICES = ("ls_vsi", "lti", "cti", "nli", "dvsi", "ld_vsi")
TABLE_LEVELS = ((0.001, 0.01), (0.001, 0.05), (0.001, 0.5))


class ScenarioError(RuntimeError):
    """A module error raised inside a scenario, tagged with the step that failed."""

    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"[{step}] {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    case: str = "case3_zip"
    zip: list | None = None
    load_direction: dict | None = None
    scale_generation: bool = True
    lambda_start: float = 0.0
    events: list = field(default_factory=list)
    monitored_buses: list = field(default_factory=lambda: [2])
    noise: dict | None = None
    indices: list = field(default_factory=lambda: list(ALL_INDICES))
    filter: dict = field(default_factory=dict)
    hysteresis: int = 3
    collapse_threshold: float = -50.0
    dlam: float | None = 0.01
    lti_window: int = 8
    normalization: str = "refreshed"
    operating_lambda: float = 1.0
    load_spread: float = 0.01
    output_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.indices) - set(ALL_INDICES)
        if unknown:
            raise ValueError(f"unknown indices {sorted(unknown)}")
        if self.normalization not in ("refreshed", "stale"):
            raise ValueError("normalization must be 'refreshed' or 'stale'")
        if self.zip is not None and len(self.zip) != 6:
            raise ValueError("zip needs six coefficients (ap, bp, gp, aq, bq, gq)")
        if self.dlam is not None and not self.dlam > 0:
            raise ValueError("dlam must be positive")
        if not self.monitored_buses:
            raise ValueError("at least one monitored bus is required")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        extra = set(data) - names
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    # -- derived objects ---------------------------------------------------
    def load(self) -> Case:
        case = builtin_case(self.case) if not os.path.exists(self.case) else load_case(self.case)
        if self.zip is not None:
            case = case.with_zip(*self.zip)
        return case

    def direction(self) -> LoadingDirection:
        return LoadingDirection(load=self.load_direction, scale_generation=self.scale_generation)

    def event_list(self) -> list[Event]:
        return [Event(float(e["at_lambda"]), EventKind(e["kind"]), int(e["target"]),
                      float(e.get("delta_b", 0.0))) for e in self.events]

    def noise_model(self) -> NoiseModel | None:
        return NoiseModel(**self.noise) if self.noise else None

    def filter_config(self) -> FilterConfig:
        return FilterConfig(**self.filter)

    def validate(self, case: Case) -> None:
        for b in self.monitored_buses:
            case.index_of(b)
        for ev in self.event_list():
            if ev.kind is EventKind.LINE_OUTAGE:
                case.branch(ev.target)
            else:
                case.index_of(ev.target)


PRESETS = {
    "three_bus": dict(name="three_bus", case="case3_zip", monitored_buses=[2]),
    "ieee30_base": dict(name="ieee30_base", case="case_ieee30", lambda_start=1.0,
                        monitored_buses=[30]),
    "ieee30_lines": dict(name="ieee30_lines", case="case_ieee30", lambda_start=1.0,
                         monitored_buses=[30],
                         events=[dict(at_lambda=2.05, kind="line_outage", target=20),
                                 dict(at_lambda=2.05, kind="line_outage", target=31)]),
    "ieee30_gen": dict(name="ieee30_gen", case="case_ieee30", lambda_start=1.0,
                       monitored_buses=[30],
                       events=[dict(at_lambda=2.25, kind="generator_outage", target=11)]),
    "ieee30_zip": dict(name="ieee30_zip", case="case_ieee30", lambda_start=1.0,
                       zip=[0.9, 0.0, 0.1, 0.9, 0.0, 0.1], monitored_buses=[30, 26],
                       dlam=None),
    "ieee30_noise": dict(name="ieee30_noise", case="case_ieee30", monitored_buses=[30],
                         indices=["ls_vsi", "lti", "cti"]),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    try:
        data = dict(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


# -- pieces of a scenario ---------------------------------------------------------

def trace_scenario(config: ScenarioConfig, case: Case | None = None) -> PVTrace:
    case = case if case is not None else config.load()
    config.validate(case)
    return trace_pv_curve(case, config.direction(), config.event_list(),
                          CPFOptions(lambda_start=config.lambda_start))


def measure_points(points, bus: int, noise: NoiseModel | None = None,
                   rng: np.random.Generator | None = None) -> list[LocalMeasurement]:
    out = []
    for p in points:
        m = extract_local(p.solution, p.case, bus)
        if noise is not None:
            m = add_noise(m, noise, rng)
        out.append(m)
    return out


def lsvsi_rows(measurements, normalization: str = "refreshed") -> list[tuple]:
    """(axis, bus, pi1_raw, pi1_norm, rho1, rho2, delta) per measurement."""
    rows = []
    stale = noload_reference(measurements[0]) if normalization == "stale" and measurements else None
    for m in measurements:
        r = evaluate(m, stale)
        g = r.geometry
        rows.append((m.axis, m.bus, r.pi1_raw, r.pi1_norm, g.radius_p, g.radius_q,
                     g.center_distance))
    return rows


def write_lsvsi(rows, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "bus", "pi1_raw", "pi1_norm", "rho1", "rho2", "delta"])
    for a, b, *vals in rows:
        w.writerow([repr(float(a)), b] + [repr(float(v)) for v in vals])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


def demand_series(measurements) -> np.ndarray:
    return np.array([-m.injection().real for m in measurements])


def monitor_stream(measurements, config: FilterConfig | None = None, hysteresis: int = 3,
                   collapse_threshold: float = -50.0, normalization: str = "refreshed"):
    """LD-VSI and alarm log for one bus stream.  Returns ``(pi2, nli, alarms)``."""
    config = config or FilterConfig()
    ms = list(measurements)
    bus = ms[0].bus
    axis = np.array([m.axis for m in ms])
    p = demand_series(ms)
    pi1 = np.array([r[3] for r in lsvsi_rows(ms, normalization)])
    pi2 = ld_vsi(axis, p, pi1, config, bus)
    vm = np.array([abs(m.v_phasor) for m in ms])
    nl = nli(axis, p, vm, config, bus)
    alarms = detect_onset(pi2, hysteresis, collapse_threshold)
    return pi2, nl, alarms


def _full_state_noise(V: np.ndarray, noise: NoiseModel | None, rng) -> np.ndarray:
    if noise is None or noise.is_zero:
        return V
    return perturb_phasors(V, noise.sigma_v_mag, noise.sigma_v_angle, rng)


def _cti_series(points, bus: int, noise, rng) -> IndexSeries:
    axis, vals = [], []
    cache: dict[int, object] = {}
    for p in points:
        y = cache.get(id(p.case))
        if y is None:
            y = cache[id(p.case)] = build_admittance(p.case)
        V = _full_state_noise(p.solution.voltage, noise, rng)
        try:
            vals.append(cti(V, y, p.case, bus))
        except ConditioningError:
            vals.append(np.nan)
        axis.append(p.lam)
    return IndexSeries("cti", bus, np.array(axis), np.array(vals))


@dataclass
class ExperimentOutput:
    config: ScenarioConfig
    trace: PVTrace
    stream: PVTrace
    lsvsi: dict
    indices: list
    alarms: dict
    manifest: dict
    files: dict = field(default_factory=dict)

    def lsvsi_series(self, bus: int) -> tuple[np.ndarray, np.ndarray]:
        rows = self.lsvsi[bus]
        return np.array([r[0] for r in rows]), np.array([r[3] for r in rows])

    def index(self, kind: str, bus: int) -> IndexSeries:
        for s in self.indices:
            if s.kind == kind and s.bus == bus:
                return s
        raise KeyError(f"no {kind} series for bus {bus}")

    def onsets(self, bus: int | None = None) -> list:
        evs = [e for b, es in self.alarms.items() if bus in (None, b) for e in es]
        return [e for e in evs if e.kind is AlarmKind.ONSET]


def _step(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ScenarioError:
        raise
    except (ValueError, KeyError, RuntimeError, ArithmeticError, OSError) as exc:
        raise ScenarioError(name, exc) from exc


def run_scenario(config: ScenarioConfig, out_dir=None) -> ExperimentOutput:
    """Trace, measure, index, monitor and (optionally) persist one scenario."""
    out_dir = out_dir if out_dir is not None else config.output_dir
    case = _step("load_case", config.load)
    trace = _step("trace", trace_scenario, config, case)
    if config.dlam is not None:
        stream = _step("resample", resample, trace, config.dlam)
    else:
        stream = trace
    noise = config.noise_model()
    seeds = np.random.SeedSequence(config.seed).spawn(len(config.monitored_buses))
    fcfg = config.filter_config()

    lsvsi, indices, alarms, streams = {}, [], {}, {}
    for bus, ss in zip(config.monitored_buses, seeds):
        rng = np.random.default_rng(ss)
        trace_ms = _step("measure", measure_points, trace.points, bus, noise, rng)
        stream_ms = (trace_ms if stream is trace
                     else _step("measure", measure_points, stream.points, bus, noise, rng))
        streams[bus] = stream_ms
        lsvsi[bus] = _step("ls_vsi", lsvsi_rows, trace_ms, config.normalization)
        if "ls_vsi" in config.indices:
            indices.append(IndexSeries("ls_vsi", bus, [r[0] for r in lsvsi[bus]],
                                       [r[3] for r in lsvsi[bus]]))
        if "dvsi" in config.indices:
            indices.append(IndexSeries("dvsi", bus, [m.axis for m in trace_ms],
                                       _step("dvsi", lambda: [dvsi(m) for m in trace_ms])))
        if "cti" in config.indices and case.bus(bus).kind is BusKind.PQ:
            indices.append(_step("cti", _cti_series, trace.points, bus, noise, rng))
        if "lti" in config.indices and len(stream_ms) >= config.lti_window:
            indices.append(_step("lti", lti_series, stream_ms, config.lti_window))
        pi2, nl, al = _step("monitor", monitor_stream, stream_ms, fcfg, config.hysteresis,
                            config.collapse_threshold, config.normalization)
        if "ld_vsi" in config.indices:
            indices.append(pi2)
        if "nli" in config.indices:
            indices.append(nl)
        alarms[bus] = al

    summary = {
        "termination": trace.termination.value,
        "lambda_snbp": trace.lambda_nose,
        "trace_points": len(trace.points),
        "stream_points": len(stream.points),
        "onsets": {str(b): [e.axis_value for e in es if e.kind is AlarmKind.ONSET]
                   for b, es in alarms.items()},
    }
    manifest = {"config": config.to_dict(), "seed": config.seed, "versions": _versions(),
                "summary": summary, "files": {}}
    out = ExperimentOutput(config, trace, stream, lsvsi, indices, alarms, manifest)
    if out_dir is not None:
        _step("write", _persist, out, Path(out_dir), streams)
    return out


def _versions() -> dict:
    return {"lsvsi": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _persist(out: ExperimentOutput, root: Path, streams: dict) -> None:
    root.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name: str, text: str):
        (root / name).write_text(text)
        files[name] = root / name

    put("trace.csv", out.trace.to_csv())
    for bus, ms in streams.items():
        put(f"measurements_bus{bus}.csv", write_stream(ms))
    rows = [r for bus in out.lsvsi for r in out.lsvsi[bus]]
    put("lsvsi.csv", write_lsvsi(rows))
    put("indices.csv", write_index_series(out.indices))
    put("alarms.csv", write_alarms([e for es in out.alarms.values() for e in es]))

    buses = out.config.monitored_buses
    put("pv.svg", render_plot(root / "trace.csv", ["lambda", "v_mag"], group="bus",
                              keep={"bus": [str(b) for b in buses]}, title="PV curve"))
    put("lsvsi.svg", render_plot(root / "lsvsi.csv", ["axis", "pi1_norm"], group="bus",
                                 title="LS-VSI"))
    put("ld_vsi.svg", render_plot(root / "indices.csv", ["axis", "value"], group="bus",
                                  keep={"kind": ["ld_vsi"]}, title="LD-VSI"))
    out.files = files
    out.manifest["files"] = {name: _sha256(p) for name, p in sorted(files.items())}
    (root / "manifest.json").write_text(json.dumps(out.manifest, indent=2, sort_keys=True,
                                                   default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# -- critical-bus ranking -------------------------------------------------------

def rank_buses(point, buses=None) -> dict:
    """LS-VSI (normalized), D-VSI (normalized) and raw D-VSI determinant per load bus.

    Buses whose circle coefficients vanish (no load and lossless connections)
    are skipped.
    """
    case = point.case
    if buses is None:
        buses = [b.id for b in case.buses if b.kind is BusKind.PQ]
    out = {}
    for b in buses:
        m = extract_local(point.solution, case, b)
        try:
            out[b] = {"ls_vsi": evaluate(m).pi1_norm, "dvsi": dvsi(m), "dvsi_raw": dvsi_raw(m)}
        except IllPosedBusError:
            log.debug("bus %s is not well posed; skipped", b)
    return out


def argmin_bus(ranking: dict, key: str) -> int:
    return min(ranking, key=lambda b: ranking[b][key])


# -- Monte-Carlo noise study -------------------------------------------------------

@dataclass(frozen=True)
class NoiseRow:
    sigma_vm: float
    sigma_va_deg: float
    index: str
    std: float
    noise_std: float
    mean: float
    trials: int


def noise_study(config: ScenarioConfig, trials: int = 150, levels=TABLE_LEVELS,
                bus: int | None = None) -> list[NoiseRow]:
    """Spread of LS-VSI, LTI and CTI under Gaussian phasor noise.

    Each trial is an independent block of ``lti_window`` snapshots whose load
    wanders around ``config.operating_lambda`` with relative spread
    ``config.load_spread``.  LTI is fitted over the block and all three
    indices are scored at its last snapshot, so the trials are i.i.d.
    ``std`` is the sample standard deviation of the noisy index over the
    trials and ``noise_std`` that of its deviation from the noise-free value,
    which is exactly zero without noise.
    """
    if trials < 30:
        raise ValueError("trials must be at least 30")
    case = config.load()
    bus = bus if bus is not None else config.monitored_buses[0]
    if case.bus(bus).kind is not BusKind.PQ:
        raise ValueError(f"bus {bus} is not a load bus")
    w = config.lti_window
    n = trials * w
    load_seed, *level_seeds = np.random.SeedSequence(config.seed).spawn(1 + len(levels))
    lams = config.operating_lambda * (
        1 + config.load_spread * np.random.default_rng(load_seed).standard_normal(n))

    direction = config.direction()
    sols, warm = [], None
    for lam in lams:
        sol = solve_power_flow(case, float(lam), warm_start=warm, direction=direction)
        if not sol.converged:
            raise ScenarioError("noise_study", RuntimeError(f"no power flow at lam={lam:g}"))
        sols.append(sol)
        warm = sol
    clean_ms = [extract_local(s, case, bus, axis=float(k), axis_kind="seconds")
                for k, s in enumerate(sols)]
    y = build_admittance(case)
    ref = noload_reference(clean_ms[0])
    scored = np.arange(w - 1, n, w)

    def indices(ms, states):
        ls = np.array([evaluate(ms[t], ref).pi1_norm for t in scored])
        snaps = [(m.v_phasor, load_current(m)) for m in ms]
        lt = np.full(trials, np.nan)
        for k, t in enumerate(scored):
            try:
                lt[k] = lti(snaps[t - w + 1:t + 1])
            except ConditioningError:
                pass
        ct = np.array([cti(states[t], y, case, bus) for t in scored])
        return {"ls_vsi": ls, "lti": lt, "cti": ct}

    clean = indices(clean_ms, [s.voltage for s in sols])
    rows = []
    for (svm, sva), ss in zip(levels, level_seeds):
        noise = NoiseModel(svm, sva)
        rng = np.random.default_rng(ss)
        ms = [add_noise(m, noise, rng) for m in clean_ms]
        states = [_full_state_noise(s.voltage, noise, rng) for s in sols]
        noisy = indices(ms, states)
        for kind in ("ls_vsi", "lti", "cti"):
            v = noisy[kind]
            rows.append(NoiseRow(svm, sva, kind, float(np.std(v, ddof=1)),
                                 float(np.std(v - clean[kind], ddof=1)), float(np.mean(v)),
                                 trials))
    return rows


def write_noise_table(rows, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma_vm", "sigma_va_deg", "index", "std", "noise_std", "mean", "trials"])
    for r in rows:
        w.writerow([repr(r.sigma_vm), repr(r.sigma_va_deg), r.index, repr(r.std),
                    repr(r.noise_std), repr(r.mean), r.trials])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


def noise_table(rows) -> dict:
    """``{(sigma_va_deg, index): std}`` lookup."""
    return {(r.sigma_va_deg, r.index): r.std for r in rows}
