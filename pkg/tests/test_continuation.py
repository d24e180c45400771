import csv
import io

import numpy as np
import pytest

from conftest import two_bus, two_bus_pmax
from lsvsi.continuation import (CPFOptions, ContinuationError, Event, EventKind, Termination,
                                find_max_power_point, find_snbp, resample, trace_pv_curve)
from lsvsi.powerflow import LoadingDirection, solve_power_flow


def test_three_bus_snbp(trace3):
    assert trace3.termination is Termination.SNBP_REACHED
    assert find_snbp(trace3) == pytest.approx(8.98, abs=0.05)


def test_three_bus_max_power_and_separation(trace3):
    lam_mp = find_max_power_point(trace3, 2)
    assert lam_mp == pytest.approx(7.09, abs=0.05)
    assert find_snbp(trace3) - lam_mp >= 1.5


def test_ieee30_zip_snbp(trace30_zip):
    assert find_snbp(trace30_zip) == pytest.approx(5.1, abs=0.1)


def test_two_bus_matches_closed_form():
    r, x = 0.02, 0.1
    trace = trace_pv_curve(two_bus(1.0, 0.0, r, x))
    assert find_snbp(trace) == pytest.approx(two_bus_pmax(r, x), abs=0.01)


def test_constant_power_max_power_is_nose():
    trace = trace_pv_curve(two_bus(1.0, 0.0))
    assert find_max_power_point(trace, 2) == pytest.approx(find_snbp(trace), abs=1e-9)


def test_single_bus_direction_step_halving(case3):
    d = LoadingDirection(load={3: 1.0})
    coarse = find_snbp(trace_pv_curve(case3, d))
    fine = find_snbp(trace_pv_curve(case3, d, options=CPFOptions(initial_step=0.05, max_step=0.1)))
    assert np.isfinite(coarse)
    assert fine == pytest.approx(coarse, rel=0.01)


def test_all_zero_direction_rejected(case3):
    with pytest.raises(ValueError):
        trace_pv_curve(case3, LoadingDirection(load={}, generation={}))


def test_negative_direction_rejected(case3):
    with pytest.raises(ValueError):
        trace_pv_curve(case3, LoadingDirection(load={2: -1.0, 3: 1.0}))


def test_zero_load_bus_has_no_max_power(trace3):
    with pytest.raises(ValueError):
        find_max_power_point(trace3, 1)


def test_base_case_infeasible_raises(case3):
    with pytest.raises(ContinuationError):
        trace_pv_curve(case3, options=CPFOptions(lambda_start=9.5))


def test_find_snbp_requires_nose(case3):
    trace = trace_pv_curve(case3, events=[Event(6.0, EventKind.LINE_OUTAGE, 2)])
    assert trace.termination is Termination.EVENT_INFEASIBLE
    with pytest.raises(ContinuationError):
        find_snbp(trace)


def test_event_before_start_rejected(case3):
    with pytest.raises(ValueError):
        trace_pv_curve(case3, events=[Event(0.5, EventKind.LINE_OUTAGE, 2)],
                       options=CPFOptions(lambda_start=1.0))


def test_lambdas_increase_and_converge(trace3, trace30):
    for trace in (trace3, trace30):
        lam = trace.lambdas
        assert np.all(np.diff(lam) > 0)
        assert all(p.solution.converged for p in trace.points)
        assert trace.lambda_nose >= lam[-1]


def test_trace_reverifies_against_power_flow(case3, trace3, ieee30, trace30):
    for case, trace in ((case3, trace3), (ieee30, trace30)):
        for p in trace.points[:: max(1, len(trace.points) // 12)]:
            sol = solve_power_flow(case, p.lam, warm_start=p.solution, direction=trace.direction)
            assert sol.converged
            assert np.max(np.abs(sol.voltage - p.solution.voltage)) < 1e-6


def test_event_discontinuity_and_earlier_nose(case3, trace3):
    ev = Event(3.0, EventKind.LINE_OUTAGE, 2)
    trace = trace_pv_curve(case3, events=[ev])
    lam = trace.lambdas
    k = [i for i, p in enumerate(trace.points) if p.event is not None]
    assert len(k) == 1 and lam[k[0]] == lam[k[0] - 1] == 3.0
    before, after = trace.points[k[0] - 1], trace.points[k[0]]
    assert abs(after.solution.v(2) - before.solution.v(2)) > 1e-6
    assert find_snbp(trace) <= find_snbp(trace3)


def test_generator_outage_lowers_nose(ieee30, trace30):
    trace = trace_pv_curve(ieee30, events=[Event(1.5, EventKind.GENERATOR_OUTAGE, 11)])
    assert find_snbp(trace) <= find_snbp(trace30)


def test_resample_grid(trace3, sweep3):
    lam = sweep3.lambdas
    assert lam[0] == 0.0
    assert np.allclose(np.diff(lam), 0.01)
    assert lam[-1] <= find_snbp(trace3)
    assert len(lam) > 850
    with pytest.raises(ValueError):
        resample(trace3, 0.0)


def test_trace_csv_layout(trace3):
    rows = list(csv.reader(io.StringIO(trace3.to_csv())))
    assert rows[0] == ["lambda", "bus", "v_mag", "v_ang", "p_injected", "q_injected"]
    assert len(rows) - 1 == 3 * len(trace3.points)
    first = rows[1:4]
    assert [int(r[1]) for r in first] == [1, 2, 3]
    assert float(first[0][2]) == pytest.approx(abs(trace3.points[0].solution.v(1)))
