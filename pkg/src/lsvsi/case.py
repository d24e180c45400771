"""Network data model, branch/LTC admittance models and MATPOWER-subset parsing.

All electrical quantities are stored in per-unit on the case base.  Bus and
branch identifiers are the ones found in the case file; branches are numbered
1..N in file order (``Branch.id``), which is how outage events refer to them.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class CaseSyntaxError(ValueError):
    """Malformed case text; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CaseValidationError(ValueError):
    pass


class BusKind(str, Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_voltage_kv: float = 0.0
    v_setpoint_pu: float | None = None
    shunt_admittance: complex = 0j


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    series_impedance: complex
    charging_susceptance: float = 0.0
    in_service: bool = True

    @property
    def series_admittance(self) -> complex:
        return 1.0 / self.series_impedance

    def two_port(self) -> np.ndarray:
        """2x2 nodal admittance block [[Y_ff, Y_ft], [Y_tf, Y_tt]]."""
        y = self.series_admittance
        ych = 0.5j * self.charging_susceptance
        return np.array([[y + ych, -y], [-y, y + ych]], dtype=complex)


@dataclass(frozen=True)
class LTCBranch(Branch):
    """Tap-changing transformer; ``to_bus`` is the tap side.

    ``series_impedance`` is the short-circuit impedance, so the short-circuit
    admittance is ``1 / series_impedance``.
    """

    tap_ratio: float = 1.0

    @property
    def short_circuit_admittance(self) -> complex:
        return 1.0 / self.series_impedance

    def two_port(self) -> np.ndarray:
        y_pd, y_pf, y_series = ltc_pi_equivalent(self)
        ych = 0.5j * self.charging_susceptance
        a = self.tap_ratio
        return np.array(
            [[y_series + y_pd + ych, -y_series],
             [-y_series, y_series + y_pf + ych / a**2]],
            dtype=complex,
        )


def ltc_pi_equivalent(ltc: LTCBranch) -> tuple[complex, complex, complex]:
    """Return (non-tap shunt, tap-side shunt, series admittance) of an LTC."""
    a = ltc.tap_ratio
    if not a > 0:
        raise ValueError(f"tap ratio must be positive, got {a}")
    y = ltc.short_circuit_admittance
    return y * (a - 1) / a, y * (1 - a) / a**2, y / a


@dataclass(frozen=True)
class ZipLoad:
    bus: int
    p_nominal: float
    q_nominal: float
    alpha_p: float = 0.0
    beta_p: float = 0.0
    gamma_p: float = 1.0
    alpha_q: float = 0.0
    beta_q: float = 0.0
    gamma_q: float = 1.0
    v_reference_pu: float = 1.0

    def __post_init__(self):
        coeffs = self.coefficients
        if min(coeffs) < 0:
            raise CaseValidationError(f"negative ZIP coefficient at bus {self.bus}")
        for name, total in (("p", sum(coeffs[:3])), ("q", sum(coeffs[3:]))):
            if abs(total - 1.0) > 1e-9:
                raise CaseValidationError(
                    f"ZIP {name}-coefficients at bus {self.bus} sum to {total}, not 1")
        if not self.v_reference_pu > 0:
            raise CaseValidationError(f"non-positive ZIP reference voltage at bus {self.bus}")

    @property
    def coefficients(self) -> tuple[float, ...]:
        return (self.alpha_p, self.beta_p, self.gamma_p,
                self.alpha_q, self.beta_q, self.gamma_q)

    def with_coefficients(self, ap, bp, gp, aq, bq, gq) -> "ZipLoad":
        return replace(self, alpha_p=ap, beta_p=bp, gamma_p=gp,
                       alpha_q=aq, beta_q=bq, gamma_q=gq)


@dataclass(frozen=True)
class Generator:
    bus: int
    p_injection: float
    q_max: float = np.inf
    q_min: float = -np.inf
    v_setpoint_pu: float = 1.0
    in_service: bool = True


@dataclass(frozen=True)
class Case:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    zip_loads: tuple[ZipLoad, ...] = ()
    generators: tuple[Generator, ...] = ()
    name: str = "case"
    base_mva: float = 100.0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})
        self.validate()

    # -- lookups ---------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def index_of(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"bus {bus_id} not in case {self.name!r}") from None

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index_of(bus_id)]

    def branch(self, branch_id: int) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(f"branch {branch_id} not in case {self.name!r}")

    @property
    def ltc_branches(self) -> tuple[LTCBranch, ...]:
        return tuple(b for b in self.branches if isinstance(b, LTCBranch))

    def load_at(self, bus_id: int) -> ZipLoad | None:
        for ld in self.zip_loads:
            if ld.bus == bus_id:
                return ld
        return None

    def in_service_branches(self) -> list[Branch]:
        return [b for b in self.branches if b.in_service]

    def neighbors(self, bus_id: int) -> list[tuple[int, Branch]]:
        """(neighbor id, branch) pairs over in-service branches."""
        out = []
        for br in self.in_service_branches():
            if br.from_bus == bus_id:
                out.append((br.to_bus, br))
            elif br.to_bus == bus_id:
                out.append((br.from_bus, br))
        return out

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind is BusKind.SLACK)

    # -- validation ------------------------------------------------------
    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        br_ids = [b.id for b in self.branches]
        if len(set(br_ids)) != len(br_ids):
            raise CaseValidationError("duplicate branch ids")
        n_slack = sum(b.kind is BusKind.SLACK for b in self.buses)
        if n_slack != 1:
            raise CaseValidationError(f"expected exactly one slack bus, found {n_slack}")
        for b in self.buses:
            if b.v_setpoint_pu is not None and not b.v_setpoint_pu > 0:
                raise CaseValidationError(f"non-positive voltage setpoint at bus {b.id}")
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise CaseValidationError(f"branch {br.id} connects bus {br.from_bus} to itself")
            if br.series_impedance == 0:
                raise CaseValidationError(f"branch {br.id} has zero series impedance")
            for end in (br.from_bus, br.to_bus):
                if end not in self._index:
                    raise CaseValidationError(f"branch {br.id} references unknown bus {end}")
        seen = set()
        for ld in self.zip_loads:
            if ld.bus not in self._index:
                raise CaseValidationError(f"ZIP load references unknown bus {ld.bus}")
            if ld.bus in seen:
                raise CaseValidationError(f"two ZIP loads at bus {ld.bus}")
            seen.add(ld.bus)
        for g in self.generators:
            if g.bus not in self._index:
                raise CaseValidationError(f"generator references unknown bus {g.bus}")
        if not self._connected():
            raise CaseValidationError("network graph over in-service branches is disconnected")

    def _connected(self) -> bool:
        if self.n_bus <= 1:
            return True
        adj = {b: set() for b in self._index}
        for br in self.in_service_branches():
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        start = self.buses[0].id
        stack, seen = [start], {start}
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n_bus

    # -- derived cases (events) -----------------------------------------
    def with_branch_outaged(self, branch_id: int) -> "Case":
        self.branch(branch_id)
        branches = tuple(replace(b, in_service=False) if b.id == branch_id else b
                         for b in self.branches)
        return replace(self, branches=branches)

    def without_branch(self, branch_id: int) -> "Case":
        self.branch(branch_id)
        return replace(self, branches=tuple(b for b in self.branches if b.id != branch_id))

    def with_generator_outaged(self, bus_id: int) -> "Case":
        gens = tuple(replace(g, in_service=False) if g.bus == bus_id else g
                     for g in self.generators)
        if gens == self.generators:
            raise KeyError(f"no in-service generator at bus {bus_id}")
        buses = self.buses
        if not any(g.in_service for g in gens if g.bus == bus_id):
            bus = self.bus(bus_id)
            if bus.kind is BusKind.SLACK:
                raise CaseValidationError("cannot take the slack generator out of service")
            buses = tuple(replace(b, kind=BusKind.PQ, v_setpoint_pu=None)
                          if b.id == bus_id else b for b in self.buses)
        return replace(self, generators=gens, buses=buses)

    def with_shunt_change(self, bus_id: int, delta_b: float) -> "Case":
        self.bus(bus_id)
        buses = tuple(replace(b, shunt_admittance=b.shunt_admittance + 1j * delta_b)
                      if b.id == bus_id else b for b in self.buses)
        return replace(self, buses=buses)

    def with_zip(self, ap, bp, gp, aq, bq, gq) -> "Case":
        """Same case with one set of ZIP coefficients applied to every load."""
        loads = tuple(ld.with_coefficients(ap, bp, gp, aq, bq, gq) for ld in self.zip_loads)
        return replace(self, zip_loads=loads)


class AdmittanceMatrix:
    """Sparse bus admittance matrix indexed by bus id."""

    def __init__(self, matrix: sp.csr_matrix, bus_ids: Sequence[int]):
        self.matrix = matrix
        self.bus_ids = list(bus_ids)
        self._index = {b: i for i, b in enumerate(self.bus_ids)}

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, key: tuple[int, int]) -> complex:
        d, k = key
        return complex(self.matrix[self._index[d], self._index[k]])

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_admittance(case: Case) -> AdmittanceMatrix:
    n = case.n_bus
    rows, cols, vals = [], [], []
    for br in case.in_service_branches():
        block = br.two_port()
        f, t = case.index_of(br.from_bus), case.index_of(br.to_bus)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [block[0, 0], block[0, 1], block[1, 0], block[1, 1]]
    for i, bus in enumerate(case.buses):
        if bus.shunt_admittance != 0:
            rows.append(i)
            cols.append(i)
            vals.append(bus.shunt_admittance)
    y = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    y.sum_duplicates()
    return AdmittanceMatrix(y, case.bus_ids)


# ---------------------------------------------------------------------------
# MATPOWER-subset text format
# ---------------------------------------------------------------------------

# MATPOWER column positions (0-based)
_BUS_I, _BUS_TYPE, _PD, _QD, _GS, _BS, _VM, _BASE_KV = 0, 1, 2, 3, 4, 5, 7, 9
_GEN_BUS, _PG, _QMAX, _QMIN, _VG, _GEN_STATUS = 0, 1, 3, 4, 5, 7
_F_BUS, _T_BUS, _BR_R, _BR_X, _BR_B, _TAP, _BR_STATUS = 0, 1, 2, 3, 4, 8, 10

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(Inf|inf|NaN|nan)$")


def _strip_comment(line: str) -> str:
    return line.split("%", 1)[0].split("#", 1)[0]


def _parse_row(text: str, lineno: int) -> list[float]:
    tokens = [t for t in re.split(r"[\s,]+", text.strip()) if t]
    row = []
    for tok in tokens:
        if not _NUMBER.match(tok):
            raise CaseSyntaxError(f"non-numeric token {tok!r}", lineno)
        row.append(float(tok))
    return row


def _read_blocks(text: str) -> tuple[dict, dict]:
    """Return ({name: scalar}, {name: (rows, first_line)})."""
    scalars, matrices = {}, {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i])
        i += 1
        if not line.strip() or line.strip().startswith("function"):
            continue
        m = _ASSIGN.match(line)
        if not m:
            raise CaseSyntaxError(f"unrecognised statement {line.strip()!r}", lineno)
        name, rhs = m.group(1), m.group(2).strip()
        if not rhs.startswith("["):
            value = rhs.rstrip(";").strip()
            if value.startswith("'") or value.startswith('"'):
                scalars[name] = value.strip("'\"")
                continue
            if not _NUMBER.match(value):
                raise CaseSyntaxError(f"cannot parse value {value!r}", lineno)
            scalars[name] = float(value)
            continue
        body = rhs[1:]
        rows: list[list[float]] = []
        row_lines: list[int] = []
        closed = False
        cur_no = lineno
        while True:
            if "]" in body:
                body, _, _ = body.partition("]")
                closed = True
            for chunk in body.split(";"):
                if chunk.strip():
                    rows.append(_parse_row(chunk, cur_no))
                    row_lines.append(cur_no)
            if closed:
                break
            if i >= len(lines):
                raise CaseSyntaxError(f"unterminated matrix 'mpc.{name}'", lineno)
            body = _strip_comment(lines[i])
            cur_no = i + 1
            i += 1
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            bad = next(ln for r, ln in zip(rows, row_lines) if len(r) != len(rows[0]))
            raise CaseSyntaxError(f"ragged matrix 'mpc.{name}'", bad)
        matrices[name] = (rows, row_lines)
    return scalars, matrices


def _col(row: Sequence[float], idx: int, default: float) -> float:
    return row[idx] if idx < len(row) else default


def parse_case(text: str, name: str | None = None) -> Case:
    """Parse MATPOWER-style case text plus an optional ``mpc.zip`` sidecar.

    The sidecar matrix has rows ``bus ap bp gp aq bq gq [v_ref]``.  Loads without
    a sidecar row are constant power.  MATPOWER puts the off-nominal tap on the
    from-bus, so tapped branches are stored with their ends swapped to keep the
    tap on ``to_bus``.
    """
    scalars, matrices = _read_blocks(text)
    for required in ("bus", "branch"):
        if required not in matrices:
            raise CaseSyntaxError(f"missing 'mpc.{required}' matrix", 1)
    base = float(scalars.get("baseMVA", 100.0))
    if not base > 0:
        raise CaseValidationError("baseMVA must be positive")

    gen_rows, gen_lines = matrices.get("gen", ([], []))
    gens = []
    for row, ln in zip(gen_rows, gen_lines):
        if len(row) < 6:
            raise CaseSyntaxError("gen row needs at least 6 columns", ln)
        gens.append(Generator(
            bus=int(row[_GEN_BUS]),
            p_injection=row[_PG] / base,
            q_max=row[_QMAX] / base,
            q_min=row[_QMIN] / base,
            v_setpoint_pu=row[_VG],
            in_service=_col(row, _GEN_STATUS, 1.0) > 0,
        ))
    gen_v = {}
    for g in gens:
        if g.in_service:
            gen_v.setdefault(g.bus, g.v_setpoint_pu)

    buses, loads = [], []
    rows, lines = matrices["bus"]
    for row, ln in zip(rows, lines):
        if len(row) < 6:
            raise CaseSyntaxError("bus row needs at least 6 columns", ln)
        bid, btype = int(row[_BUS_I]), int(row[_BUS_TYPE])
        if btype == 3:
            kind = BusKind.SLACK
        elif btype == 2:
            kind = BusKind.PV if bid in gen_v else BusKind.PQ
        elif btype == 1:
            kind = BusKind.PQ
        else:
            raise CaseSyntaxError(f"unsupported bus type {btype}", ln)
        vset = None
        if kind is not BusKind.PQ:
            vset = gen_v.get(bid, _col(row, _VM, 1.0))
        buses.append(Bus(
            id=bid, kind=kind, base_voltage_kv=_col(row, _BASE_KV, 0.0),
            v_setpoint_pu=vset,
            shunt_admittance=complex(row[_GS], row[_BS]) / base,
        ))
        if row[_PD] != 0 or row[_QD] != 0:
            loads.append(ZipLoad(bus=bid, p_nominal=row[_PD] / base, q_nominal=row[_QD] / base))

    branches: list[Branch] = []
    rows, lines = matrices["branch"]
    for k, (row, ln) in enumerate(zip(rows, lines), start=1):
        if len(row) < 5:
            raise CaseSyntaxError("branch row needs at least 5 columns", ln)
        f, t = int(row[_F_BUS]), int(row[_T_BUS])
        z = complex(row[_BR_R], row[_BR_X])
        if z == 0:
            raise CaseValidationError(f"branch {k} (line {ln}) has zero impedance")
        tap = _col(row, _TAP, 0.0)
        status = _col(row, _BR_STATUS, 1.0) > 0
        if tap not in (0.0, 1.0):
            branches.append(LTCBranch(id=k, from_bus=t, to_bus=f, series_impedance=z,
                                      charging_susceptance=row[_BR_B], in_service=status,
                                      tap_ratio=tap))
        else:
            branches.append(Branch(id=k, from_bus=f, to_bus=t, series_impedance=z,
                                   charging_susceptance=row[_BR_B], in_service=status))

    if "zip" in matrices:
        by_bus = {ld.bus: ld for ld in loads}
        for row, ln in zip(*matrices["zip"]):
            if len(row) < 7:
                raise CaseSyntaxError("zip row needs 7 columns: bus ap bp gp aq bq gq", ln)
            bid = int(row[0])
            if bid not in by_bus:
                by_bus[bid] = ZipLoad(bus=bid, p_nominal=0.0, q_nominal=0.0)
            try:
                by_bus[bid] = replace(by_bus[bid], alpha_p=row[1], beta_p=row[2], gamma_p=row[3],
                                      alpha_q=row[4], beta_q=row[5], gamma_q=row[6],
                                      v_reference_pu=_col(row, 7, 1.0))
            except CaseValidationError as exc:
                raise CaseValidationError(f"line {ln}: {exc}") from None
        order = {b.id: i for i, b in enumerate(buses)}
        loads = sorted(by_bus.values(), key=lambda ld: order.get(ld.bus, -1))

    return Case(buses=tuple(buses), branches=tuple(branches), zip_loads=tuple(loads),
                generators=tuple(gens), name=name or str(scalars.get("name", "case")),
                base_mva=base)


def load_case(path) -> Case:
    with open(path) as fh:
        text = fh.read()
    stem = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return parse_case(text, name=stem)


def builtin_case(name: str) -> Case:
    """Load one of the bundled case files (``case3_zip``, ``case_ieee30``)."""
    text = resources.files("lsvsi.data").joinpath(f"{name}.m").read_text()
    return parse_case(text, name=name)


def format_case(case: Case) -> str:
    """Serialise a Case back to the MATPOWER subset read by :func:`parse_case`."""
    base = case.base_mva
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", "",
           "mpc.bus = ["]
    code = {BusKind.PQ: 1, BusKind.PV: 2, BusKind.SLACK: 3}
    for b in case.buses:
        ld = case.load_at(b.id)
        pd, qd = (ld.p_nominal * base, ld.q_nominal * base) if ld else (0.0, 0.0)
        out.append("\t" + "\t".join(repr(float(v)) for v in (
            b.id, code[b.kind], pd, qd, b.shunt_admittance.real * base,
            b.shunt_admittance.imag * base, 1, b.v_setpoint_pu or 1.0, 0, b.base_voltage_kv)) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in case.generators:
        out.append("\t" + "\t".join(repr(float(v)) for v in (
            g.bus, g.p_injection * base, 0, g.q_max * base, g.q_min * base,
            g.v_setpoint_pu, base, 1 if g.in_service else 0)) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in sorted(case.branches, key=lambda b: b.id):
        f, t, tap = br.from_bus, br.to_bus, 0.0
        if isinstance(br, LTCBranch):
            f, t, tap = br.to_bus, br.from_bus, br.tap_ratio
        out.append("\t" + "\t".join(repr(float(v)) for v in (
            f, t, br.series_impedance.real, br.series_impedance.imag, br.charging_susceptance,
            0, 0, 0, tap, 0, 1 if br.in_service else 0)) + ";")
    out += ["];", "", "mpc.zip = ["]
    for ld in case.zip_loads:
        out.append("\t" + "\t".join(repr(float(v)) for v in (ld.bus, *ld.coefficients,
                                                              ld.v_reference_pu)) + ";")
    out += ["];", ""]
    return "\n".join(out)
