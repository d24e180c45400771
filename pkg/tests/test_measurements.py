import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import two_bus
from lsvsi.case import build_admittance
from lsvsi.measurements import (LocalMeasurement, NoiseModel, StreamFormatError, add_noise,
                                extract_local, read_stream, stream_header, write_stream)
from lsvsi.powerflow import PFOptions, solve_power_flow, zip_injection

NO_Q = PFOptions(enforce_q_limits=False)


def _solved(case, lam=1.0):
    sol = solve_power_flow(case, lam, options=NO_Q)
    assert sol.converged
    return sol


def test_two_bus_ohms_law():
    case = two_bus(1.0, 0.3, 0.02, 0.1)
    sol = _solved(case)
    m = extract_local(sol, case, 2)
    y = 1 / complex(0.02, 0.1)
    assert m.neighbors == (1,)
    assert abs(m.branch_currents[0] - (sol.v(2) - sol.v(1)) * y) < 1e-12
    assert m.branch_admittances[0] == pytest.approx(y)


def test_three_bus_kcl(case3):
    sol = _solved(case3)
    m = extract_local(sol, case3, 2)
    ybus = build_admittance(case3).matrix.toarray()
    k = case3.index_of(2)
    oracle = sol.voltage[k] * np.conj(ybus[k] @ sol.voltage)
    p, q = zip_injection(case3.load_at(2), abs(sol.v(2)), 1.0)
    assert abs(m.injection() - oracle) < 1e-10
    assert abs(m.injection() - complex(-p, -q)) < 1e-8


@pytest.mark.parametrize("name", ["case3", "ieee30"])
def test_reconstruction_every_bus(name, request):
    case = request.getfixturevalue(name)
    sol = _solved(case)
    for bus in case.bus_ids:
        m = extract_local(sol, case, bus)
        truth = np.array([sol.v(k) for k in m.neighbors])
        assert np.max(np.abs(m.neighbor_voltages() - truth)) < 1e-10


def test_reconstruction_across_ltc(ieee30):
    sol = _solved(ieee30)
    ltcs = ieee30.ltc_branches
    assert ltcs
    for br in ltcs:
        for bus, other in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
            m = extract_local(sol, ieee30, bus)
            k = m.neighbors.index(other)
            assert abs(m.neighbor_voltages()[k] - sol.v(other)) < 1e-10


def test_extract_rejects_bad_input(case3):
    sol = _solved(case3)
    with pytest.raises(KeyError):
        extract_local(sol, case3, 99)
    bad = solve_power_flow(case3, 9.5, options=NO_Q)
    assert not bad.converged
    with pytest.raises(ValueError):
        extract_local(bad, case3, 2)


def test_measurement_invariants():
    with pytest.raises(ValueError):
        LocalMeasurement(bus=1, axis=0.0, v_phasor=0j, neighbors=(), branch_currents=(),
                         branch_admittances=())
    with pytest.raises(ValueError):
        LocalMeasurement(bus=1, axis=0.0, v_phasor=1 + 0j, neighbors=(2,), branch_currents=(),
                         branch_admittances=())


def test_noise_zero_is_identity(case3):
    m = extract_local(_solved(case3), case3, 2)
    assert add_noise(m, NoiseModel()) == m


def test_noise_deterministic_and_admittances_untouched(case3):
    m = extract_local(_solved(case3), case3, 2)
    noise = NoiseModel(0.001, 0.05, seed=7)
    a, b = add_noise(m, noise), add_noise(m, noise)
    assert a == b
    assert a != m
    assert a.branch_admittances == m.branch_admittances
    assert a.zip_coeffs == m.zip_coeffs and a.local_shunt == m.local_shunt


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseModel(sigma_v_mag=-0.001)


def _mag_perturbations(m, sigma, n=10_000, seed=3):
    rng = np.random.default_rng(seed)
    noise = NoiseModel(sigma, 0.0)
    return np.array([abs(add_noise(m, noise, rng).v_phasor) - abs(m.v_phasor) for _ in range(n)])


def test_noise_moment(case3):
    m = extract_local(_solved(case3), case3, 2)
    d = _mag_perturbations(m, 0.001)
    assert np.std(d) == pytest.approx(0.001, rel=0.05)
    assert abs(np.mean(d)) < 4 * 0.001 / np.sqrt(len(d))


def test_noise_scaling(case3):
    m = extract_local(_solved(case3), case3, 2)
    s1 = np.std(_mag_perturbations(m, 0.001, seed=11))
    s2 = np.std(_mag_perturbations(m, 0.002, seed=12))
    assert s2 / s1 == pytest.approx(2.0, rel=0.10)


def test_angle_noise_in_degrees(case3):
    m = extract_local(_solved(case3), case3, 2)
    rng = np.random.default_rng(5)
    noise = NoiseModel(0.0, 0.5)
    d = [np.angle(add_noise(m, noise, rng).v_phasor / m.v_phasor) for _ in range(10_000)]
    assert np.std(d) == pytest.approx(np.deg2rad(0.5), rel=0.05)


def test_empty_stream_is_header_only():
    text = write_stream([])
    assert text == ",".join(stream_header([])) + "\n"
    assert read_stream(text) == []


def test_header_exact(case3):
    m = extract_local(_solved(case3), case3, 2)
    header = write_stream([m]).splitlines()[0]
    assert header == ("axis,axis_kind,bus,v_re,v_im,"
                      "nbr_1_i_re,nbr_1_i_im,nbr_1_y_re,nbr_1_y_im,"
                      "nbr_3_i_re,nbr_3_i_im,nbr_3_y_re,nbr_3_y_im,"
                      "shunt_g,shunt_b,ap,bp,gp,aq,bq,gq")


def _same(a: LocalMeasurement, b: LocalMeasurement, digits=12):
    def close(x, y):
        return abs(x - y) <= 10.0 ** (-digits) * max(1.0, abs(x))

    assert a.bus == b.bus and a.axis_kind == b.axis_kind and a.neighbors == b.neighbors
    assert close(a.axis, b.axis) and close(a.v_phasor, b.v_phasor)
    assert all(close(x, y) for x, y in zip(a.branch_currents, b.branch_currents))
    assert all(close(x, y) for x, y in zip(a.branch_admittances, b.branch_admittances))
    assert close(a.local_shunt, b.local_shunt)
    assert all(close(x, y) for x, y in zip(a.zip_coeffs, b.zip_coeffs))


def test_single_measurement_round_trip(case3):
    m = extract_local(_solved(case3), case3, 2)
    (back,) = read_stream(write_stream([m]))
    _same(m, back)
    assert back.branch_currents == m.branch_currents


def test_sweep_stream_round_trip(case3, sweep3, tmp_path):
    ms = [extract_local(p.solution, p.case, 2) for p in sweep3.points]
    assert len(ms) == 898
    path = tmp_path / "stream.csv"
    write_stream(ms, path)
    with open(path) as fh:
        back = read_stream(fh)
    assert len(back) == 898
    for a, b in zip(ms, back):
        _same(a, b)


def test_seconds_axis_round_trip(case3):
    m = extract_local(_solved(case3), case3, 2, axis=12.5, axis_kind="seconds")
    (back,) = read_stream(write_stream([m]))
    assert back.axis == 12.5 and back.axis_kind == "seconds"


def test_malformed_rows_report_row_number(case3):
    m = extract_local(_solved(case3), case3, 2)
    lines = write_stream([m, m, m]).splitlines()
    lines[2] = lines[2].replace(lines[2].split(",")[3], "abc", 1)
    with pytest.raises(StreamFormatError) as err:
        read_stream("\n".join(lines) + "\n")
    assert err.value.row == 3
    short = write_stream([m]).splitlines()
    short[1] = ",".join(short[1].split(",")[:-1])
    with pytest.raises(StreamFormatError) as err:
        read_stream("\n".join(short))
    assert err.value.row == 2
    with pytest.raises(StreamFormatError) as err:
        read_stream("time,bus\n1,2\n")
    assert err.value.row == 1


def test_stream_rejects_mixed_buses(case3):
    sol = _solved(case3)
    with pytest.raises(ValueError):
        write_stream([extract_local(sol, case3, 2), extract_local(sol, case3, 3)])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-1.0, 1.0), st.floats(0.005, 0.1), st.floats(0.02, 0.5))
def test_reconstruction_property(p, q, r, x):
    case = two_bus(p, q, r, x)
    sol = solve_power_flow(case, 1.0, options=NO_Q)
    if not sol.converged:
        return
    m = extract_local(sol, case, 2)
    assert abs(m.neighbor_voltages()[0] - sol.v(1)) < 1e-10
