"""Local static voltage stability index (LS-VSI).

The real and reactive power balance at a load bus are two circles in the
(v_r, v_i) plane whose coefficients depend only on local measurements.  The
index is ``rho1^2 rho2^2 - beta12^2`` with ``beta12 = (delta^2 - rho1^2 -
rho2^2) / 2``: positive while the circles cross at two points and zero when
they touch, which is the saddle-node bifurcation.

Sign convention.  With ``G + jB`` the off-diagonal admittance-matrix entry of
each adjacent branch (minus its series admittance), the circles are

    h1 |V|^2 + h2 v_r + h3 v_i = p_rhs
    h4 |V|^2 - h3 v_r + h2 v_i = q_rhs

with ``h1 = -sum G + g_sh + p_L alpha_p``, ``h4 = sum B - b_sh + q_L alpha_q``,
``h2 + j h3 = sum (G + jB) V_k`` and ``p_rhs = -p_L gamma_p``,
``q_rhs = -q_L gamma_q`` (``p_L``, ``q_L`` the load at the current loading,
positive for consumption).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .measurements import LocalMeasurement


class DegenerateLoadError(ValueError):
    """Constant-current ZIP component present; the circle form does not apply."""


class IllPosedBusError(ValueError):
    pass


class InfeasibleCircleError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


PI1_SLACK = 1e-8
DENOM_GUARD = 1e-9
_ZERO_H = 1e-12


@dataclass(frozen=True)
class HParams:
    h1: float
    h2: float
    h3: float
    h4: float
    p_rhs: float
    q_rhs: float


@dataclass(frozen=True)
class CircleGeometry:
    center_p: tuple[float, float]
    center_q: tuple[float, float]
    radius_p: float
    radius_q: float

    @property
    def center_distance(self) -> float:
        return float(np.hypot(self.center_p[0] - self.center_q[0],
                              self.center_p[1] - self.center_q[1]))

    @property
    def beta12(self) -> float:
        return 0.5 * (self.center_distance ** 2 - self.radius_p ** 2 - self.radius_q ** 2)

    def residuals(self, v: complex) -> tuple[float, float]:
        """Distance of ``v`` from each circle (zero when it lies on both)."""
        r1 = np.hypot(v.real - self.center_p[0], v.imag - self.center_p[1]) - self.radius_p
        r2 = np.hypot(v.real - self.center_q[0], v.imag - self.center_q[1]) - self.radius_q
        return float(r1), float(r2)


@dataclass(frozen=True)
class VSIResult:
    pi1_raw: float
    pi1_norm: float
    noload_reference: float
    geometry: CircleGeometry | None = None


def back_solve_load(m: LocalMeasurement) -> tuple[float, float]:
    """Load (p_L, q_L) at the present loading implied by the measured injection."""
    ap, bp, gp, aq, bq, gq = m.zip_coeffs
    s = m.injection()
    vm = abs(m.v_phasor) / m.v_reference
    den_p = max(ap * vm * vm + bp * vm + gp, DENOM_GUARD)
    den_q = max(aq * vm * vm + bq * vm + gq, DENOM_GUARD)
    return -s.real / den_p, -s.imag / den_q


def _network_terms(y_offdiag: np.ndarray, v_nbr: np.ndarray) -> tuple[float, float, float, float]:
    c = np.sum(y_offdiag * v_nbr)
    return float(y_offdiag.real.sum()), float(y_offdiag.imag.sum()), float(c.real), float(c.imag)


def _check_posed(h1: float, h4: float, scale: float) -> None:
    if abs(h1) <= _ZERO_H * scale or abs(h4) <= _ZERO_H * scale:
        raise IllPosedBusError(f"h1={h1:g}, h4={h4:g}: bus is not well posed")


def compute_h_params(m: LocalMeasurement) -> HParams:
    """Circle coefficients at the monitored bus from one local snapshot."""
    ap, bp, gp, aq, bq, gq = m.zip_coeffs
    if bp != 0 or bq != 0:
        raise DegenerateLoadError("constant-current load component (beta != 0) is not supported")
    y = -m.admittances
    sum_g, sum_b, h2, h3 = _network_terms(y, m.neighbor_voltages())
    p_l, q_l = back_solve_load(m)
    vr2 = m.v_reference ** 2
    h1 = -sum_g + m.local_shunt.real + p_l * ap / vr2
    h4 = sum_b - m.local_shunt.imag + q_l * aq / vr2
    _check_posed(h1, h4, float(np.abs(y).sum()) or 1.0)
    return HParams(h1, h2, h3, h4, -p_l * gp, -q_l * gq)


def circle_geometry(h: HParams) -> CircleGeometry:
    hh = h.h2 ** 2 + h.h3 ** 2
    rho1_sq = h.p_rhs / h.h1 + hh / (4 * h.h1 ** 2)
    rho2_sq = h.q_rhs / h.h4 + hh / (4 * h.h4 ** 2)
    if rho1_sq < 0 or rho2_sq < 0:
        raise InfeasibleCircleError(
            f"imaginary radius (rho1^2={rho1_sq:g}, rho2^2={rho2_sq:g})")
    return CircleGeometry(center_p=(-h.h2 / (2 * h.h1), -h.h3 / (2 * h.h1)),
                          center_q=(h.h3 / (2 * h.h4), -h.h2 / (2 * h.h4)),
                          radius_p=float(np.sqrt(rho1_sq)), radius_q=float(np.sqrt(rho2_sq)))


def pi1_raw(g: CircleGeometry) -> float:
    return float((g.radius_p * g.radius_q) ** 2 - g.beta12 ** 2)


def determinant_form(g: CircleGeometry) -> float:
    """Same quantity written as the family-of-circles determinant."""
    dp, dq = -g.radius_p ** 2, -g.radius_q ** 2
    return float(dp * dq - g.beta12 ** 2)


def ls_vsi(g: CircleGeometry, noload_reference: float) -> VSIResult:
    if not noload_reference > 0:
        raise NormalizationError(f"no-load reference must be positive, got {noload_reference}")
    raw = pi1_raw(g)
    return VSIResult(raw, raw / noload_reference, float(noload_reference), g)


def noload_template(m: LocalMeasurement) -> LocalMeasurement:
    """``m`` with zero injection and every phasor at 1 p.u., angle 0."""
    return replace(m, v_phasor=1 + 0j,
                   branch_currents=tuple(0j for _ in m.branch_currents),
                   local_shunt=m.local_shunt)


def noload_reference(m: LocalMeasurement) -> float:
    """Raw index of the template network at no load with a flat voltage profile."""
    y = -m.admittances
    sum_g, sum_b, h2, h3 = _network_terms(y, np.ones(len(y), dtype=complex))
    h1 = -sum_g + m.local_shunt.real
    h4 = sum_b - m.local_shunt.imag
    _check_posed(h1, h4, float(np.abs(y).sum()) or 1.0)
    ref = pi1_raw(circle_geometry(HParams(h1, h2, h3, h4, 0.0, 0.0)))
    if not ref > 0:
        raise IllPosedBusError(f"non-positive no-load reference {ref:g}")
    return ref


def evaluate(m: LocalMeasurement, reference: float | None = None) -> VSIResult:
    """Algorithm 1 at one snapshot: h-parameters, circles, normalized index."""
    ref = noload_reference(m) if reference is None else reference
    return ls_vsi(circle_geometry(compute_h_params(m)), ref)


def expanded_form(h: HParams) -> float:
    """Closed-form expansion of the index inequality, kept as a sign cross-check.

    It reduces to ``rho1^2 rho2^2 - beta12`` (linear in ``beta12``), so on a
    feasible state its sign matches the index whenever ``beta12 <= 0`` or
    ``rho1 rho2 >= 1``; outside that region the two can disagree.
    """
    hh = h.h2 ** 2 + h.h3 ** 2
    a = hh / (4 * h.h1 ** 2) + h.p_rhs / h.h1
    b = hh / (4 * h.h4 ** 2) + h.q_rhs / h.h4
    d1 = h.h2 / (2 * h.h1) + h.h3 / (2 * h.h4)
    d2 = h.h3 / (2 * h.h1) - h.h2 / (2 * h.h4)
    return (hh / (8 * h.h1 ** 2) + hh / (8 * h.h4 ** 2) + 0.5 * h.p_rhs / h.h1
            + 0.5 * h.q_rhs / h.h4 + a * b - 0.5 * d1 ** 2 - 0.5 * d2 ** 2)
