"""Comparison indices: local and centralized Thevenin indices, NLI and D-VSI."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .case import AdmittanceMatrix, BusKind, Case
from .measurements import LocalMeasurement
from .vsi import HParams, IllPosedBusError, circle_geometry, pi1_raw

INDEX_KINDS = ("ls_vsi", "lti", "cti", "nli", "dvsi", "ld_vsi")


class ConditioningError(ValueError):
    """Thevenin window does not determine a unique equivalent."""


@dataclass(frozen=True)
class TheveninEstimate:
    e_th: complex
    z_th: complex
    window_size: int
    conditioning: float


@dataclass
class IndexSeries:
    """One index over an ordered axis at one bus.

    ``axis`` is non-decreasing; a repeated value marks a discrete event where
    the pre- and post-event states share the same loading.
    """

    kind: str
    bus: int
    axis: np.ndarray
    values: np.ndarray
    flags: np.ndarray | None = None
    available_at: np.ndarray | None = None

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in INDEX_KINDS:
            raise ValueError(f"unknown index kind {self.kind!r}")
        if self.axis.shape != self.values.shape:
            raise ValueError("axis and values must have the same length")
        if np.any(np.diff(self.axis) < 0):
            raise ValueError("axis must be non-decreasing")
        if self.available_at is None:
            self.available_at = self.axis
        if self.flags is None:
            self.flags = np.zeros(self.values.shape, dtype=bool)

    def __len__(self) -> int:
        return len(self.values)

    def rows(self):
        for a, v in zip(self.axis, self.values):
            yield a, self.bus, self.kind, v


def write_index_series(series, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "bus", "kind", "value"])
    for s in series:
        for a, bus, kind, v in s.rows():
            w.writerow([repr(float(a)), bus, kind, repr(float(v))])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


# -- Thevenin indices -----------------------------------------------------------

def load_current(m: LocalMeasurement) -> complex:
    """Current drawn from the network by everything connected at the bus."""
    return -m.total_current()


def thevenin_fit(voltages, currents) -> TheveninEstimate:
    """Least-squares fit of ``V = E - Z I`` over a window of snapshots."""
    v = np.asarray(voltages, dtype=complex)
    i = np.asarray(currents, dtype=complex)
    if len(v) < 2 or len(v) != len(i):
        raise ConditioningError("need at least two aligned snapshots")
    A = np.column_stack([np.ones_like(i), -i])
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e12:
        raise ConditioningError(f"window is rank deficient (condition {cond:.3g})")
    (e, z), *_ = np.linalg.lstsq(A, v, rcond=None)
    return TheveninEstimate(complex(e), complex(z), len(v), cond)


def impedance_ratio_index(z_th: complex, v: complex, i: complex) -> float:
    if i == 0:
        return 1.0
    return float(np.clip(1.0 - abs(z_th) / abs(v / i), 0.0, 1.0))


def lti(window) -> float:
    """Local Thevenin index from ``(V, I_load)`` snapshots, newest last."""
    window = list(window)
    est = thevenin_fit([w[0] for w in window], [w[1] for w in window])
    v, i = window[-1]
    return impedance_ratio_index(est.z_th, v, i)


def lti_series(measurements, window_size: int = 8) -> IndexSeries:
    """Sliding-window LTI over a single-bus measurement stream."""
    ms = list(measurements)
    if window_size < 2:
        raise ValueError("window_size must be at least 2")
    snaps = [(m.v_phasor, load_current(m)) for m in ms]
    axis, vals = [], []
    for t in range(window_size - 1, len(ms)):
        try:
            vals.append(lti(snaps[t - window_size + 1:t + 1]))
        except ConditioningError:
            vals.append(np.nan)
        axis.append(ms[t].axis)
    return IndexSeries("lti", ms[0].bus if ms else 0, np.array(axis), np.array(vals))


def coupled_thevenin(voltage: np.ndarray, y: AdmittanceMatrix, case: Case, bus: int,
                     load_currents: np.ndarray | None = None) -> TheveninEstimate:
    """Thevenin equivalent of one load bus from the full state and admittance matrix.

    Load buses see ``V_L = E_L - Z_LL I_L`` with ``Z_LL = inv(Y_LL)`` and
    ``E_L = -Z_LL Y_LG V_G``; the other load currents are folded into the source.
    """
    kinds = [b.kind for b in case.buses]
    gen = [i for i, k in enumerate(kinds) if k is not BusKind.PQ]
    load = [i for i, k in enumerate(kinds) if k is BusKind.PQ]
    j = case.index_of(bus)
    if j not in load:
        raise ValueError(f"bus {bus} is not a load bus")
    Y = y.toarray()
    V = np.asarray(voltage, dtype=complex)
    if load_currents is None:
        load_currents = -(Y @ V)
    I_L = np.asarray(load_currents, dtype=complex)[load]
    Y_LL = Y[np.ix_(load, load)]
    try:
        Z_LL = np.linalg.inv(Y_LL)
    except np.linalg.LinAlgError:
        raise ConditioningError("load block of the admittance matrix is singular") from None
    cond = float(np.linalg.cond(Y_LL))
    E_L = -Z_LL @ Y[np.ix_(load, gen)] @ V[gen]
    r = load.index(j)
    coupling = Z_LL[r] @ I_L - Z_LL[r, r] * I_L[r]
    return TheveninEstimate(complex(E_L[r] - coupling), complex(Z_LL[r, r]), 1, cond)


def cti(voltage: np.ndarray, y: AdmittanceMatrix, case: Case, bus: int,
        load_currents: np.ndarray | None = None) -> float:
    """Centralized Thevenin index at ``bus``.

    ``load_currents`` (full bus vector, load convention) lets measured currents
    replace the ones implied by ``Y @ V``.
    """
    est = coupled_thevenin(voltage, y, case, bus, load_currents)
    j = case.index_of(bus)
    V = np.asarray(voltage, dtype=complex)
    i = (-(y.toarray()[j] @ V) if load_currents is None else load_currents[j])
    return impedance_ratio_index(est.z_th, V[j], i)


# -- New LIVES index ------------------------------------------------------------

def nli(axis, p_series, v_mag_series, config, bus: int = 0) -> IndexSeries:
    """Filtered dP/dG with G = P/|V|^2; steps where G does not grow are dropped."""
    from .monitor import filtered_increment

    p = np.asarray(p_series, dtype=float)
    g = p / np.asarray(v_mag_series, dtype=float) ** 2
    dp, stamps, avail = filtered_increment(p, config, axis)
    dg, _, _ = filtered_increment(g, config, axis)
    keep = dg > config.epsilon_g
    return IndexSeries("nli", bus, stamps[keep], dp[keep] / dg[keep],
                       available_at=avail[keep])


# -- D-VSI ------------------------------------------------------------------------

def t_params(m: LocalMeasurement, injection: complex | None = None) -> HParams:
    """Circle coefficients when every load is read as constant power.

    Only the series branch admittances enter; the right-hand sides are the net
    injection at the bus.
    """
    y = -m.admittances
    c = np.sum(y * m.neighbor_voltages())
    s = m.injection() if injection is None else injection
    t1, t4 = -float(y.real.sum()), float(y.imag.sum())
    if t1 == 0 or t4 == 0:
        raise IllPosedBusError(f"t1={t1:g}, t4={t4:g}: bus is not well posed")
    return HParams(t1, float(c.real), float(c.imag), t4, float(s.real), float(s.imag))


def dvsi_raw(m: LocalMeasurement, injection: complex | None = None) -> float:
    return pi1_raw(circle_geometry(t_params(m, injection)))


def dvsi_reference(m: LocalMeasurement) -> float:
    y = -m.admittances
    h = HParams(-float(y.real.sum()), float(y.real.sum()), float(y.imag.sum()),
                float(y.imag.sum()), 0.0, 0.0)
    ref = pi1_raw(circle_geometry(h))
    if not ref > 0:
        raise IllPosedBusError(f"non-positive no-load reference {ref:g}")
    return ref


def dvsi(m: LocalMeasurement, injection: complex | None = None) -> float:
    """Normalized determinant index under the constant-power reading."""
    return dvsi_raw(m, injection) / dvsi_reference(m)
