"""Local phasor measurements at a monitored bus.

A measurement carries the bus voltage, the series-element current of every
adjacent branch, the series admittance of those branches and the aggregate of
all shunt elements hanging on the bus (bus shunt, line charging, LTC pi
shunts).  Because the currents are series currents, the neighbour voltage is
recovered exactly as ``V_k = V_d - I_dk / y_dk``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .case import Case
from .powerflow import PFSolution


class StreamFormatError(ValueError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


AXIS_KINDS = ("lambda", "seconds")


@dataclass(frozen=True)
class LocalMeasurement:
    bus: int
    axis: float
    v_phasor: complex
    neighbors: tuple[int, ...]
    branch_currents: tuple[complex, ...]
    branch_admittances: tuple[complex, ...]
    local_shunt: complex = 0j
    zip_coeffs: tuple[float, ...] = (0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
    axis_kind: str = "lambda"
    v_reference: float = 1.0

    def __post_init__(self):
        n = len(self.neighbors)
        if len(self.branch_currents) != n or len(self.branch_admittances) != n:
            raise ValueError("neighbour, current and admittance lists must be aligned")
        if not abs(self.v_phasor) > 0:
            raise ValueError("voltage phasor magnitude must be positive")
        if self.axis_kind not in AXIS_KINDS:
            raise ValueError(f"axis_kind must be one of {AXIS_KINDS}")
        if len(self.zip_coeffs) != 6:
            raise ValueError("zip_coeffs needs six entries")

    @property
    def currents(self) -> np.ndarray:
        return np.asarray(self.branch_currents, dtype=complex)

    @property
    def admittances(self) -> np.ndarray:
        return np.asarray(self.branch_admittances, dtype=complex)

    def neighbor_voltages(self) -> np.ndarray:
        """Neighbour phasors implied by the series currents."""
        return self.v_phasor - self.currents / self.admittances

    def total_current(self) -> complex:
        return complex(self.currents.sum() + self.local_shunt * self.v_phasor)

    def injection(self) -> complex:
        """Net complex power injected at the bus (generation minus demand)."""
        return complex(self.v_phasor * np.conj(self.total_current()))


def _end_terms(block: np.ndarray, at_from: bool) -> tuple[complex, complex]:
    """(series admittance, end shunt) of a branch seen from one of its ends."""
    if at_from:
        y_self, y_mut = block[0, 0], block[0, 1]
    else:
        y_self, y_mut = block[1, 1], block[1, 0]
    return complex(-y_mut), complex(y_self + y_mut)


def extract_local(solution: PFSolution, case: Case, bus: int,
                  axis: float | None = None, axis_kind: str = "lambda") -> LocalMeasurement:
    """Noise-free local measurement at ``bus`` from a solved state."""
    if not solution.converged:
        raise ValueError("solution did not converge")
    case.index_of(bus)
    v_d = solution.v(bus)
    series: dict[int, complex] = {}
    shunt = complex(case.bus(bus).shunt_admittance)
    for nb, br in case.neighbors(bus):
        y, y_end = _end_terms(br.two_port(), br.from_bus == bus)
        series[nb] = series.get(nb, 0j) + y
        shunt += y_end
    nbrs = tuple(series)
    ys = tuple(series[k] for k in nbrs)
    cur = tuple(y * (v_d - solution.v(k)) for k, y in zip(nbrs, ys))
    load = case.load_at(bus)
    coeffs = load.coefficients if load is not None else (0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
    v_ref = load.v_reference_pu if load is not None else 1.0
    return LocalMeasurement(bus=bus, axis=solution.lam if axis is None else float(axis),
                            v_phasor=complex(v_d), neighbors=nbrs, branch_currents=cur,
                            branch_admittances=ys, local_shunt=shunt, zip_coeffs=coeffs,
                            axis_kind=axis_kind, v_reference=v_ref)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian phasor noise in polar form.

    Magnitude sigmas are absolute (p.u.), angle sigmas are in degrees.  Current
    channels default to the voltage settings.
    """

    sigma_v_mag: float = 0.0
    sigma_v_angle: float = 0.0
    sigma_i_mag: float | None = None
    sigma_i_angle: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma_i_mag is None:
            object.__setattr__(self, "sigma_i_mag", self.sigma_v_mag)
        if self.sigma_i_angle is None:
            object.__setattr__(self, "sigma_i_angle", self.sigma_v_angle)
        if min(self.sigma_v_mag, self.sigma_v_angle, self.sigma_i_mag, self.sigma_i_angle) < 0:
            raise ValueError("noise sigmas must be non-negative")

    @property
    def is_zero(self) -> bool:
        return max(self.sigma_v_mag, self.sigma_v_angle, self.sigma_i_mag,
                   self.sigma_i_angle) == 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def perturb_phasors(z: np.ndarray, sigma_mag: float, sigma_deg: float,
                    rng: np.random.Generator) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    mag = np.abs(z) + sigma_mag * rng.standard_normal(z.shape)
    ang = np.angle(z) + np.deg2rad(sigma_deg) * rng.standard_normal(z.shape)
    return mag * np.exp(1j * ang)


def add_noise(m: LocalMeasurement, noise: NoiseModel,
              rng: np.random.Generator | None = None) -> LocalMeasurement:
    """Perturb the voltage and current phasors of ``m``.

    Without an explicit generator the draw is seeded from ``noise.seed``, so
    the same call always returns the same measurement.
    """
    if noise.is_zero:
        return m
    rng = rng if rng is not None else noise.rng()
    v = perturb_phasors(np.array([m.v_phasor]), noise.sigma_v_mag, noise.sigma_v_angle, rng)[0]
    cur = perturb_phasors(m.currents, noise.sigma_i_mag, noise.sigma_i_angle, rng)
    return replace(m, v_phasor=complex(v), branch_currents=tuple(complex(c) for c in cur))


# -- CSV stream ---------------------------------------------------------------

_HEAD = ["axis", "axis_kind", "bus", "v_re", "v_im"]
_TAIL = ["shunt_g", "shunt_b", "ap", "bp", "gp", "aq", "bq", "gq"]


def _fmt(x: float) -> str:
    return repr(float(x))


def stream_header(neighbors) -> list[str]:
    cols = list(_HEAD)
    for k in neighbors:
        cols += [f"nbr_{k}_i_re", f"nbr_{k}_i_im", f"nbr_{k}_y_re", f"nbr_{k}_y_im"]
    return cols + _TAIL


def write_stream(measurements, out=None) -> str:
    """Serialise a single-bus measurement stream to CSV text.

    The neighbour columns are the union over the stream in order of first
    appearance; a branch that is out of service in a row is written as zeros.
    """
    measurements = list(measurements)
    buses = {m.bus for m in measurements}
    if len(buses) > 1:
        raise ValueError(f"a stream holds one monitored bus, got {sorted(buses)}")
    neighbors: list[int] = []
    for m in measurements:
        neighbors += [k for k in m.neighbors if k not in neighbors]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(stream_header(neighbors))
    for m in measurements:
        row = [_fmt(m.axis), m.axis_kind, m.bus, _fmt(m.v_phasor.real), _fmt(m.v_phasor.imag)]
        data = dict(zip(m.neighbors, zip(m.branch_currents, m.branch_admittances)))
        for k in neighbors:
            i, y = data.get(k, (0j, 0j))
            row += [_fmt(i.real), _fmt(i.imag), _fmt(y.real), _fmt(y.imag)]
        row += [_fmt(m.local_shunt.real), _fmt(m.local_shunt.imag)]
        row += [_fmt(c) for c in m.zip_coeffs]
        w.writerow(row)
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


def read_stream(source) -> list[LocalMeasurement]:
    """Parse CSV text (or an open file) written by :func:`write_stream`."""
    text = source if isinstance(source, str) else source.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise StreamFormatError("missing header", 1) from None
    if header[:5] != _HEAD or header[-8:] != _TAIL or (len(header) - 13) % 4:
        raise StreamFormatError("unexpected header", 1)
    neighbors = []
    for j in range(5, len(header) - 8, 4):
        name = header[j]
        if not (name.startswith("nbr_") and name.endswith("_i_re")):
            raise StreamFormatError(f"bad neighbour column {name!r}", 1)
        neighbors.append(int(name[4:-5]))
    out = []
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise StreamFormatError(f"expected {len(header)} fields, got {len(row)}", rowno)
        try:
            vals = [float(x) for x in row[3:]]
            bus = int(row[2])
            axis = float(row[0])
            nbrs, cur, ys = [], [], []
            for n, k in enumerate(neighbors):
                ir, ii, yr, yi = vals[2 + 4 * n: 6 + 4 * n]
                if yr == 0 and yi == 0:
                    continue
                nbrs.append(k)
                cur.append(complex(ir, ii))
                ys.append(complex(yr, yi))
            m = LocalMeasurement(bus=bus, axis=axis, axis_kind=row[1],
                                 v_phasor=complex(vals[0], vals[1]), neighbors=tuple(nbrs),
                                 branch_currents=tuple(cur), branch_admittances=tuple(ys),
                                 local_shunt=complex(vals[-8], vals[-7]),
                                 zip_coeffs=tuple(vals[-6:]))
        except ValueError as exc:
            raise StreamFormatError(str(exc), rowno) from None
        out.append(m)
    return out
