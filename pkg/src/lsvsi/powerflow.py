"""Newton-Raphson AC power flow with voltage-dependent (ZIP) loads.

Load demand at bus ``d`` is ``lam * f_d * p_L * (a*|V|^2 + b*|V| + c)`` with
``|V|`` normalised by the load's reference voltage and ``f_d`` the loading
direction factor.  Net injection is generation minus demand.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .case import BusKind, Case, ZipLoad, build_admittance

log = logging.getLogger(__name__)

# networks up to this size use dense linear algebra (faster than sparse overhead)
DENSE_LIMIT = 200


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class PFOptions:
    tolerance: float = 1e-8
    max_iterations: int = 30
    flat_start: bool = True
    enforce_q_limits: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class LoadingDirection:
    """Per-bus multipliers applied to nominal load and generation under ``lam``.

    Missing buses get factor 0 when a mapping is given; ``None`` means 1 for
    every bus.  ``scale_generation=False`` keeps non-slack generation at its
    base value (the slack bus picks up the whole increase).
    """

    load: dict | None = None
    generation: dict | None = None
    scale_generation: bool = True

    def load_factors(self, case: Case) -> np.ndarray:
        return self._factors(case, self.load)

    def gen_factors(self, case: Case) -> np.ndarray:
        return self._factors(case, self.generation)

    @staticmethod
    def _factors(case: Case, mapping) -> np.ndarray:
        if mapping is None:
            return np.ones(case.n_bus)
        out = np.zeros(case.n_bus)
        for bus, f in mapping.items():
            out[case.index_of(int(bus))] = float(f)
        return out

    def validate(self, case: Case) -> None:
        lf = self.load_factors(case)
        if np.any(lf < 0) or (self.scale_generation and np.any(self.gen_factors(case) < 0)):
            raise ValueError("loading direction must be non-negative")
        if not np.any(lf) and not (self.scale_generation and np.any(self.gen_factors(case))):
            raise ValueError("loading direction is all zero")
        loads = np.zeros(case.n_bus)
        for ld in case.zip_loads:
            loads[case.index_of(ld.bus)] = abs(ld.p_nominal) + abs(ld.q_nominal)
        if not np.any(lf * loads > 0):
            raise ValueError("loading direction does not scale any load")


@dataclass
class PFSolution:
    voltage: np.ndarray
    bus_ids: list
    converged: bool
    iterations: int
    max_mismatch: float
    lam: float
    bus_kinds: tuple = field(default=(), repr=False)

    def v(self, bus_id: int) -> complex:
        return complex(self.voltage[self.bus_ids.index(bus_id)])

    @property
    def v_mag(self) -> np.ndarray:
        return np.abs(self.voltage)

    @property
    def v_ang(self) -> np.ndarray:
        return np.angle(self.voltage)

    @property
    def v_real(self) -> np.ndarray:
        return self.voltage.real

    @property
    def v_imag(self) -> np.ndarray:
        return self.voltage.imag


def zip_injection(load: ZipLoad, v_mag_pu: float, lam: float) -> tuple[float, float]:
    """Real/reactive demand (positive = consumption) of a ZIP load."""
    v = v_mag_pu / load.v_reference_pu
    p = lam * load.p_nominal * (load.alpha_p * v * v + load.beta_p * v + load.gamma_p)
    q = lam * load.q_nominal * (load.alpha_q * v * v + load.beta_q * v + load.gamma_q)
    return p, q


class NetworkModel:
    """Compiled arrays of a Case under a loading direction.

    Shared by the power-flow and continuation solvers.  ``kinds`` may differ
    from the case bus kinds after PV->PQ switching.
    """

    def __init__(self, case: Case, direction: LoadingDirection | None = None, kinds=None,
                 q_fixed: np.ndarray | None = None):
        self.case = case
        self.direction = direction or LoadingDirection()
        n = case.n_bus
        self.n = n
        self.Y = build_admittance(case).matrix.tocsr()
        self.dense = n <= DENSE_LIMIT
        self.Yd = self.Y.toarray() if self.dense else None
        kinds = list(kinds) if kinds is not None else [b.kind for b in case.buses]
        self.kinds = tuple(kinds)
        self.ref = np.array([i for i, k in enumerate(kinds) if k is BusKind.SLACK])
        self.pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
        self.pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
        self.pvpq = np.r_[self.pv, self.pq].astype(int)

        lf = self.direction.load_factors(case)
        self.p_nom = np.zeros(n)
        self.q_nom = np.zeros(n)
        self.coef = np.zeros((n, 6))
        self.coef[:, 2] = self.coef[:, 5] = 1.0
        self.v_ref = np.ones(n)
        for ld in case.zip_loads:
            i = case.index_of(ld.bus)
            self.p_nom[i] = ld.p_nominal * lf[i]
            self.q_nom[i] = ld.q_nominal * lf[i]
            self.coef[i] = ld.coefficients
            self.v_ref[i] = ld.v_reference_pu

        self.pg = np.zeros(n)
        for g in case.generators:
            if g.in_service:
                self.pg[case.index_of(g.bus)] += g.p_injection
        if self.direction.scale_generation:
            self.gen_factor = self.direction.gen_factors(case)
        else:
            self.gen_factor = None
        self.q_fixed = np.zeros(n) if q_fixed is None else np.asarray(q_fixed, dtype=float)

        self.v_set = np.ones(n)
        for i, b in enumerate(case.buses):
            if kinds[i] is not BusKind.PQ and b.v_setpoint_pu is not None:
                self.v_set[i] = b.v_setpoint_pu

    # -- injections ------------------------------------------------------
    def generation(self, lam: float) -> np.ndarray:
        if self.gen_factor is None:
            return self.pg.copy()
        return lam * self.gen_factor * self.pg

    def d_generation(self) -> np.ndarray:
        if self.gen_factor is None:
            return np.zeros(self.n)
        return self.gen_factor * self.pg

    def demand(self, vm: np.ndarray, lam: float) -> np.ndarray:
        v = vm / self.v_ref
        c = self.coef
        p = self.p_nom * (c[:, 0] * v * v + c[:, 1] * v + c[:, 2])
        q = self.q_nom * (c[:, 3] * v * v + c[:, 4] * v + c[:, 5])
        return lam * (p + 1j * q)

    def d_demand_dvm(self, vm: np.ndarray, lam: float) -> np.ndarray:
        v = vm / self.v_ref
        c = self.coef
        dp = self.p_nom * (2 * c[:, 0] * v + c[:, 1]) / self.v_ref
        dq = self.q_nom * (2 * c[:, 3] * v + c[:, 4]) / self.v_ref
        return lam * (dp + 1j * dq)

    def injection(self, vm: np.ndarray, lam: float) -> np.ndarray:
        return self.generation(lam) + 1j * self.q_fixed - self.demand(vm, lam)

    def mismatch(self, V: np.ndarray, lam: float) -> np.ndarray:
        return V * np.conj(self.Y @ V) - self.injection(np.abs(V), lam)

    def d_mismatch_dlam(self, V: np.ndarray) -> np.ndarray:
        return self.demand(np.abs(V), 1.0) - self.d_generation()

    def reduced(self, F: np.ndarray) -> np.ndarray:
        return np.r_[F.real[self.pvpq], F.imag[self.pq]]

    # -- Jacobian --------------------------------------------------------
    def jacobian(self, V: np.ndarray, lam: float):
        """Reduced Jacobian; dense ndarray for small networks, CSC otherwise."""
        vm = np.abs(V)
        pvpq, pq = self.pvpq, self.pq
        if self.dense:
            Y = self.Yd
            Ibus = Y @ V
            dS_dVa = 1j * (np.diag(V * np.conj(Ibus)) - V[:, None] * np.conj(Y * V[None, :]))
            vn = V / vm
            dS_dVm = V[:, None] * np.conj(Y * vn[None, :]) + np.diag(np.conj(Ibus) * vn)
            dS_dVm = dS_dVm + np.diag(self.d_demand_dvm(vm, lam))
            return np.block([
                [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
                [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
            ])
        Y = self.Y
        Ibus = Y @ V
        dV = sp.diags(V)
        dI = sp.diags(Ibus)
        dVn = sp.diags(V / vm)
        dS_dVa = 1j * dV @ np.conj(dI - Y @ dV)
        dS_dVm = dV @ np.conj(Y @ dVn) + np.conj(dI) @ dVn
        dS_dVm = dS_dVm + sp.diags(self.d_demand_dvm(vm, lam))
        dS_dVa = dS_dVa.tocsr()
        dS_dVm = dS_dVm.tocsr()
        j11 = dS_dVa[pvpq][:, pvpq].real
        j12 = dS_dVm[pvpq][:, pq].real
        j21 = dS_dVa[pq][:, pvpq].imag
        j22 = dS_dVm[pq][:, pq].imag
        return sp.vstack([sp.hstack([j11, j12]), sp.hstack([j21, j22])], format="csc")

    def augmented(self, J, column: np.ndarray, row: np.ndarray):
        """[[J, column], [row]] in the same storage as J."""
        if self.dense:
            return np.block([[J, column[:, None]], [row[None, :]]])
        return sp.vstack([sp.hstack([J, sp.csc_matrix(column[:, None])]),
                          sp.csc_matrix(row[None, :])], format="csc")

    # -- state packing ---------------------------------------------------
    def unpack(self, V: np.ndarray, x: np.ndarray) -> np.ndarray:
        va = np.angle(V).copy()
        vm = np.abs(V).copy()
        npvpq = len(self.pvpq)
        va[self.pvpq] = x[:npvpq]
        vm[self.pq] = x[npvpq:]
        return vm * np.exp(1j * va)

    def pack(self, V: np.ndarray) -> np.ndarray:
        return np.r_[np.angle(V)[self.pvpq], np.abs(V)[self.pq]]

    def initial_voltage(self, warm: np.ndarray | None = None) -> np.ndarray:
        if warm is None:
            V = self.v_set.astype(complex)
        else:
            V = np.array(warm, dtype=complex)
        fixed = np.r_[self.ref, self.pv].astype(int)
        ang = np.angle(V)
        V[fixed] = self.v_set[fixed] * np.exp(1j * ang[fixed])
        V[self.ref] = self.v_set[self.ref]
        return V


def solve_linear(J, rhs) -> np.ndarray | None:
    if isinstance(J, np.ndarray):
        try:
            dx = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dx)) or np.linalg.cond(J) > 1e14:
            return None
        return dx
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            dx = spsolve(J, rhs)
        except (MatrixRankWarning, RuntimeError):
            return None
    if not np.all(np.isfinite(dx)):
        return None
    return np.atleast_1d(dx)


def newton(model: NetworkModel, V0: np.ndarray, lam: float, tol: float, max_it: int):
    """Plain Newton iteration; returns (V, converged, iterations, max_mismatch)."""
    V = V0.copy()
    F = model.reduced(model.mismatch(V, lam))
    err = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while err >= tol and it < max_it:
        it += 1
        J = model.jacobian(V, lam)
        dx = solve_linear(J, -F)
        if dx is None:
            return V, False, it, err
        V = model.unpack(V, model.pack(V) + dx)
        if np.any(np.abs(V) < 1e-3):
            return V, False, it, np.inf
        F = model.reduced(model.mismatch(V, lam))
        err = np.max(np.abs(F)) if F.size else 0.0
        if not np.isfinite(err) or err > 1e8:
            return V, False, it, err
    return V, err < tol, it, err


def solve_power_flow(case: Case, lam: float = 1.0, options: PFOptions | None = None,
                     warm_start: PFSolution | None = None,
                     direction: LoadingDirection | None = None) -> PFSolution:
    """Solve the AC power flow at load scale ``lam``.

    Non-convergence is reported through ``converged=False`` rather than raised.
    """
    options = options or PFOptions()
    model = NetworkModel(case, direction)
    warm = warm_start.voltage if warm_start is not None else None
    V0 = model.initial_voltage(warm)
    V, ok, it, err = newton(model, V0, lam, options.tolerance, options.max_iterations)
    total_it = it
    if ok and options.enforce_q_limits:
        V, ok, extra, err, model = _enforce_q_limits(case, model, V, lam, options)
        total_it += extra
    if not ok:
        log.debug("power flow did not converge at lam=%g (mismatch %.3g)", lam, err)
    return PFSolution(voltage=V, bus_ids=case.bus_ids, converged=bool(ok), iterations=total_it,
                      max_mismatch=float(err), lam=float(lam), bus_kinds=model.kinds)


def generator_reactive_output(model: NetworkModel, V: np.ndarray, lam: float) -> np.ndarray:
    """Reactive power each bus must generate to balance its demand."""
    s_calc = V * np.conj(model.Y @ V)
    return s_calc.imag + model.demand(np.abs(V), lam).imag


def _enforce_q_limits(case, model, V, lam, options, max_rounds: int = 10):
    qmax = np.zeros(case.n_bus)
    qmin = np.zeros(case.n_bus)
    for g in case.generators:
        if g.in_service:
            i = case.index_of(g.bus)
            qmax[i] += g.q_max
            qmin[i] += g.q_min
    kinds = list(model.kinds)
    q_fixed = model.q_fixed.copy()
    iters = 0
    ok, err = True, 0.0
    for _ in range(max_rounds):
        qg = generator_reactive_output(model, V, lam)
        changed = False
        for i in model.pv:
            if qg[i] > qmax[i] + options.tolerance:
                q_fixed[i], kinds[i], changed = qmax[i], BusKind.PQ, True
            elif qg[i] < qmin[i] - options.tolerance:
                q_fixed[i], kinds[i], changed = qmin[i], BusKind.PQ, True
        if not changed:
            break
        model = NetworkModel(case, model.direction, kinds=kinds, q_fixed=q_fixed)
        V, ok, it, err = newton(model, V, lam, options.tolerance, options.max_iterations)
        iters += it
        if not ok:
            break
    else:
        err = float(np.max(np.abs(model.reduced(model.mismatch(V, lam)))))
    return V, ok, iters, err, model


def net_injection(case: Case, solution: PFSolution,
                  direction: LoadingDirection | None = None,
                  model: NetworkModel | None = None) -> np.ndarray:
    """Scheduled complex net injection at every bus for a solved state."""
    if model is None:
        model = NetworkModel(case, direction, kinds=solution.bus_kinds or None)
    s = model.injection(np.abs(solution.voltage), solution.lam)
    # slack and PV reactive output come from the network solution
    s_calc = solution.voltage * np.conj(model.Y @ solution.voltage)
    fixed_p = model.ref
    fixed_q = np.r_[model.ref, model.pv].astype(int)
    s = s.copy()
    s[fixed_p] = s_calc[fixed_p].real + 1j * s[fixed_p].imag
    s[fixed_q] = s[fixed_q].real + 1j * s_calc[fixed_q].imag
    return s
