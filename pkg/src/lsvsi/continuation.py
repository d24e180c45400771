"""Predictor-corrector continuation power flow.

Natural-parameter steps in ``lam`` (secant predictor, Newton corrector) carry
the trace up the PV curve; when the corrector keeps failing near the nose the
tracer switches to pseudo-arclength steps, which pass the turning point and
give a parabolic estimate of the saddle-node loadability limit.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .case import Case
from .powerflow import (LoadingDirection, NetworkModel, PFOptions, PFSolution, newton,
                        net_injection, solve_linear, zip_injection)

log = logging.getLogger(__name__)


class ContinuationError(RuntimeError):
    pass


class Termination(str, Enum):
    SNBP_REACHED = "snbp_reached"
    STEP_LIMIT = "step_limit"
    EVENT_INFEASIBLE = "event_infeasible"


class EventKind(str, Enum):
    LINE_OUTAGE = "line_outage"
    GENERATOR_OUTAGE = "generator_outage"
    SHUNT_SWITCH = "shunt_switch"


@dataclass(frozen=True)
class Event:
    at_lambda: float
    kind: EventKind
    target: int
    delta_b: float = 0.0

    def apply(self, case: Case) -> Case:
        if self.kind is EventKind.LINE_OUTAGE:
            return case.with_branch_outaged(self.target)
        if self.kind is EventKind.GENERATOR_OUTAGE:
            return case.with_generator_outaged(self.target)
        if self.kind is EventKind.SHUNT_SWITCH:
            return case.with_shunt_change(self.target, self.delta_b)
        raise ValueError(f"unknown event kind {self.kind}")

    def label(self) -> str:
        if self.kind is EventKind.SHUNT_SWITCH:
            return f"{self.kind.value}:{self.target}:{self.delta_b:g}"
        return f"{self.kind.value}:{self.target}"


@dataclass(frozen=True)
class CPFOptions:
    lambda_start: float = 0.0
    initial_step: float = 0.1
    max_step: float = 0.2
    lambda_resolution: float = 0.01
    max_points: int = 5000
    lambda_max: float = 1e3
    pf: PFOptions = field(default_factory=PFOptions)


@dataclass
class TracePoint:
    lam: float
    solution: PFSolution
    injection: np.ndarray
    case: Case = field(repr=False)
    event: str | None = None


@dataclass
class PVTrace:
    points: list
    direction: LoadingDirection
    termination: Termination
    lambda_nose: float | None = None
    nose_bracket: tuple | None = None
    events: tuple = ()

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    def bus_series(self, bus_id: int, attr: str = "v_mag") -> np.ndarray:
        out = []
        for p in self.points:
            i = p.solution.bus_ids.index(bus_id)
            if attr == "p":
                out.append(p.injection[i].real)
            elif attr == "q":
                out.append(p.injection[i].imag)
            else:
                out.append(getattr(p.solution, attr)[i])
        return np.array(out)

    @property
    def last(self) -> TracePoint:
        return self.points[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "bus", "v_mag", "v_ang", "p_injected", "q_injected"])
        for p in self.points:
            for i, bus in enumerate(p.solution.bus_ids):
                v = p.solution.voltage[i]
                s = p.injection[i]
                w.writerow([f"{p.lam:.12g}", bus, f"{abs(v):.12g}", f"{np.angle(v):.12g}",
                            f"{s.real:.12g}", f"{s.imag:.12g}"])
        return buf.getvalue()


def _point(model, case, V, lam, it, err, event=None) -> TracePoint:
    sol = PFSolution(voltage=V.copy(), bus_ids=case.bus_ids, converged=True, iterations=it,
                     max_mismatch=float(err), lam=float(lam), bus_kinds=model.kinds)
    return TracePoint(lam=float(lam), solution=sol,
                      injection=net_injection(case, sol, model=model), case=case,
                      event=event)


def trace_pv_curve(case: Case, direction: LoadingDirection | None = None,
                   events=(), options: CPFOptions | None = None) -> PVTrace:
    """Trace the upper branch of the lam-V curve up to the saddle-node point."""
    options = options or CPFOptions()
    direction = direction or LoadingDirection()
    direction.validate(case)
    events = tuple(sorted(events, key=lambda e: e.at_lambda))
    for ev in events:
        if ev.at_lambda < options.lambda_start:
            raise ValueError(f"event at lam={ev.at_lambda} precedes the trace start")
    tol, max_it = options.pf.tolerance, options.pf.max_iterations

    model = NetworkModel(case, direction)
    lam = options.lambda_start
    V, ok, it, err = newton(model, model.initial_voltage(), lam, tol, max_it)
    if not ok:
        raise ContinuationError(f"base case infeasible at lam={lam}")
    points = [_point(model, case, V, lam, it, err)]
    pending = list(events)
    step = options.initial_step
    successes = 0
    prev = None  # (lam, x) of the point before the last, for the secant predictor
    termination = Termination.STEP_LIMIT

    while len(points) < options.max_points:
        if pending and abs(pending[0].at_lambda - lam) < 1e-12:
            ev = pending.pop(0)
            case = ev.apply(case)
            model = NetworkModel(case, direction)
            V2, ok, it, err = newton(model, model.initial_voltage(V), lam, tol, max_it)
            if not ok:
                log.info("event %s at lam=%g leaves no operating point", ev.label(), lam)
                termination = Termination.EVENT_INFEASIBLE
                break
            V = V2
            points.append(_point(model, case, V, lam, it, err, event=ev.label()))
            prev = None
            step = options.initial_step
            successes = 0
            continue

        target = lam + step
        if pending and target > pending[0].at_lambda - 1e-12:
            target = pending[0].at_lambda
        if target > options.lambda_max:
            break
        x = model.pack(V)
        if prev is not None:
            x_pred = x + (x - prev[1]) * (target - lam) / (lam - prev[0])
        else:
            x_pred = x
        V_try, ok, it, err = newton(model, model.unpack(V, x_pred), target, tol, max_it)
        if ok and _drifted(V, V_try):
            ok = False
        if ok:
            prev = (lam, x)
            lam, V = target, V_try
            points.append(_point(model, case, V, lam, it, err))
            successes += 1
            if successes >= 3:
                step = min(step * 1.5, options.max_step)
                successes = 0
            continue
        step /= 2
        successes = 0
        if step < options.lambda_resolution / 4:
            termination = Termination.SNBP_REACHED
            break

    trace = PVTrace(points=points, direction=direction, termination=termination, events=events)
    if termination is Termination.SNBP_REACHED:
        _locate_nose(trace, model, options)
    return trace


def _drifted(V_old, V_new, limit: float = 0.5) -> bool:
    # a jump onto the lower branch or to a spurious root shows up as a large voltage change
    return bool(np.max(np.abs(V_new - V_old)) > limit)


def _tangent(model, V, lam, z_prev) -> np.ndarray | None:
    J = model.jacobian(V, lam)
    dF = model.reduced(model.d_mismatch_dlam(V))
    A = model.augmented(J, dF, z_prev)
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    z = solve_linear(A, rhs)
    if z is None:
        return None
    return z / np.linalg.norm(z)


def _arclength_step(model, V, lam, z, sigma, tol, max_it):
    """Pseudo-arclength corrector from (V, lam) along tangent z."""
    y0 = np.r_[model.pack(V), lam]
    y = y0 + sigma * z
    Vk = model.unpack(V, y[:-1])
    for it in range(1, max_it + 1):
        lam_k = y[-1]
        F = model.reduced(model.mismatch(Vk, lam_k))
        g = z @ (y - y0) - sigma
        res = np.r_[F, g]
        if np.max(np.abs(res)) < tol:
            return Vk, lam_k, True, it
        J = model.jacobian(Vk, lam_k)
        dF = model.reduced(model.d_mismatch_dlam(Vk))
        A = model.augmented(J, dF, z)
        dy = solve_linear(A, -res)
        if dy is None:
            return Vk, lam_k, False, it
        y = y + dy
        Vk = model.unpack(Vk, y[:-1])
        if np.any(np.abs(Vk) < 1e-3):
            return Vk, lam_k, False, it
    return Vk, y[-1], False, max_it


def _locate_nose(trace: PVTrace, model: NetworkModel, options: CPFOptions) -> None:
    """Walk past the turning point with arclength steps and fit lam(s)."""
    tol, max_it = options.pf.tolerance, options.pf.max_iterations
    last = trace.points[-1]
    V, lam = last.solution.voltage, last.lam
    y_last = np.r_[model.pack(V), lam]
    if len(trace.points) >= 2 and trace.points[-2].event is None:
        p2 = trace.points[-2]
        z0 = y_last - np.r_[model.pack(p2.solution.voltage), p2.lam]
    else:
        z0 = np.zeros_like(y_last)
        z0[-1] = 1.0
    z0 /= np.linalg.norm(z0)
    z = _tangent(model, V, lam, z0)
    if z is None:
        z = z0
    if z[-1] < 0:
        z = -z
    sigma = options.lambda_resolution / 2
    samples = [(0.0, lam)]
    s = 0.0
    upper = []
    for _ in range(400):
        V_new, lam_new, ok, it = _arclength_step(model, V, lam, z, sigma, tol, max_it)
        if not ok:
            sigma /= 2
            if sigma < 1e-7:
                break
            continue
        s += sigma
        samples.append((s, lam_new))
        z_new = _tangent(model, V_new, lam_new, z)
        if z_new is None:
            z_new = z
        if lam_new < lam:
            # turned: keep two more samples for the fit
            V, lam, z = V_new, lam_new, z_new
            V_new, lam_new, ok, it = _arclength_step(model, V, lam, z, sigma, tol, max_it)
            if ok:
                s += sigma
                samples.append((s, lam_new))
            break
        upper.append((V_new.copy(), lam_new, it))
        V, lam, z = V_new, lam_new, z_new
    ss = np.array([a for a, _ in samples])
    ll = np.array([b for _, b in samples])
    k = int(np.argmax(ll))
    lo, hi = max(k - 1, 0), min(k + 2, len(ll))
    nose = float(ll[k])
    if hi - lo == 3:
        c = np.polyfit(ss[lo:hi], ll[lo:hi], 2)
        if c[0] < 0:
            nose = float(max(c[2] - c[1] ** 2 / (4 * c[0]), ll[k]))
    case = trace.points[-1].case
    for V_u, lam_u, it in upper:
        if lam_u > trace.points[-1].lam + 1e-9:
            trace.points.append(_point(model, case, V_u, lam_u, it, 0.0))
    trace.lambda_nose = nose
    trace.nose_bracket = (trace.points[-1].lam, nose)


def resample(trace: PVTrace, dlam: float, options: CPFOptions | None = None) -> PVTrace:
    """Re-solve a trace on a uniform grid ``lam = lam0 + k * dlam``.

    Each grid point uses the network in force at that loading (post-event at
    an event lam), so the axis is strictly increasing.  Grid points past the
    last converged trace point are dropped.
    """
    if not dlam > 0:
        raise ValueError("dlam must be positive")
    options = options or CPFOptions()
    tol, max_it = options.pf.tolerance, options.pf.max_iterations
    pts = trace.points
    lam0, lam_end = pts[0].lam, pts[-1].lam
    models: dict[int, NetworkModel] = {}
    out = []
    V_prev, case_prev = None, None
    j = 0
    for k in range(int(np.floor((lam_end - lam0) / dlam + 1e-9)) + 1):
        lam = round(lam0 + k * dlam, 12)
        while j + 1 < len(pts) and pts[j + 1].lam <= lam + 1e-12:
            j += 1
        ref = pts[j]
        case = ref.case
        model = models.get(id(case))
        if model is None:
            model = models[id(case)] = NetworkModel(case, trace.direction)
        V0 = V_prev if (V_prev is not None and case_prev is case) else ref.solution.voltage
        V, ok, it, err = newton(model, V0, lam, tol, max_it)
        if not ok or _drifted(ref.solution.voltage, V):
            break
        out.append(_point(model, case, V, lam, it, err))
        V_prev, case_prev = V, case
    return PVTrace(points=out, direction=trace.direction, termination=trace.termination,
                   lambda_nose=trace.lambda_nose, nose_bracket=trace.nose_bracket,
                   events=trace.events)


def find_snbp(trace: PVTrace) -> float:
    """Loadability limit (saddle-node lam) of a trace that reached the nose."""
    if trace.termination is not Termination.SNBP_REACHED or trace.lambda_nose is None:
        raise ContinuationError(f"trace ended with {trace.termination.value}, not at the SNBP")
    return trace.lambda_nose


def find_max_power_point(trace: PVTrace, bus: int) -> float:
    """lam at which the real power drawn by the load at ``bus`` peaks along the trace."""
    case0 = trace.points[0].case
    ld = case0.load_at(bus)
    factor = trace.direction.load_factors(case0)[case0.index_of(bus)]
    if ld is None or ld.p_nominal == 0 or factor == 0:
        raise ValueError(f"bus {bus} carries no scaled real-power load")
    pts = [p for p in trace.points if p.event is None] or trace.points
    lam = np.array([p.lam for p in pts])
    vm = np.array([abs(p.solution.v(bus)) for p in pts])
    demand = np.array([zip_injection(ld, v, l * factor)[0] for v, l in zip(vm, lam)])
    demand = np.sign(ld.p_nominal) * demand
    k = int(np.argmax(demand))
    if k == len(lam) - 1:
        # still rising at the last point: the peak is the nose itself
        if trace.lambda_nose is not None:
            return float(trace.lambda_nose)
        return float(lam[k])
    if k == 0:
        return float(lam[k])
    x, y = lam[k - 1:k + 2], demand[k - 1:k + 2]
    c = np.polyfit(x, y, 2)
    if c[0] >= 0:
        return float(lam[k])
    return float(np.clip(-c[1] / (2 * c[0]), x[0], x[-1]))
