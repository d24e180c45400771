"""Dynamic index (LD-VSI) and the onset/collapse alarm state machine.

The filtered increment of a sampled signal is the difference of two adjacent
T-sample means.  It becomes available at the newest sample, but it measures
the change across the midpoint between the two windows, so each increment
carries two stamps: ``available_at`` (when a monitor can act on it) and
``axis`` (the point of the curve it describes).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .baselines import IndexSeries


@dataclass(frozen=True)
class FilterConfig:
    window_samples: int = 10
    sample_period: float = 1.0
    epsilon_denominator: float = 1e-9
    epsilon_g: float = 1e-6

    def __post_init__(self):
        if self.window_samples < 1:
            raise ValueError("window_samples must be positive")


def filtered_increment(series, config: FilterConfig, axis=None):
    """Adjacent-window mean difference of ``series``.

    Returns ``(increments, centre_stamps, available_at)``; all empty when the
    series is shorter than two windows.
    """
    x = np.asarray(series, dtype=float)
    T = config.window_samples
    n = len(x)
    if axis is None:
        axis = np.arange(n) * config.sample_period
    axis = np.asarray(axis, dtype=float)
    if n < 2 * T:
        empty = np.empty(0)
        return empty, empty, empty
    means = sliding_window_view(x, T).mean(axis=1)  # means[j] covers x[j:j+T]
    t = np.arange(2 * T - 1, n)
    recent, older = means[t - T + 1], means[t - 2 * T + 1]
    centre = 0.5 * (axis[t - T] + axis[t - T + 1])
    return recent - older, centre, axis[t]


def ld_vsi(axis, p_series, pi1_series, config: FilterConfig | None = None,
           bus: int = 0) -> IndexSeries:
    """Pi2 = filtered dP / (-filtered dPi1), carried forward over flat denominators."""
    config = config or FilterConfig()
    dp, centre, avail = filtered_increment(p_series, config, axis)
    dpi, _, _ = filtered_increment(pi1_series, config, axis)
    out = np.empty(len(dp))
    flat = np.abs(dpi) <= config.epsilon_denominator
    prev = np.nan
    for k in range(len(dp)):
        if not flat[k]:
            prev = dp[k] / -dpi[k]
        out[k] = prev
    return IndexSeries("ld_vsi", bus, centre, out, flags=flat, available_at=avail)


def first_sign_flip(series: IndexSeries, hold: int = 1) -> float | None:
    """Axis value where the series first crosses from positive to negative.

    The crossing counts once the series stays negative for ``hold`` samples; the
    location is linearly interpolated between the bracketing samples.
    """
    v, a = series.values, series.axis
    for k in range(1, len(v)):
        if v[k - 1] > 0 and v[k] < 0 and np.all(v[k:k + hold] < 0) and k + hold <= len(v):
            return float(a[k - 1] + (a[k] - a[k - 1]) * v[k - 1] / (v[k - 1] - v[k]))
    return None


class AlarmKind(str, Enum):
    ONSET = "onset"
    COLLAPSE_PROXIMITY = "collapse_proximity"
    CLEARED = "cleared"


@dataclass(frozen=True)
class AlarmEvent:
    """``axis_value`` locates the event on the curve; ``fired_at`` is when it fired."""

    kind: AlarmKind
    axis_value: float
    bus: int
    pi2_value: float
    fired_at: float | None = None


def detect_onset(pi2: IndexSeries, hysteresis: int = 3,
                 collapse_threshold: float = -50.0) -> list[AlarmEvent]:
    """Run the alarm state machine over a Pi2 series.

    Onset fires once Pi2 has been negative for ``hysteresis`` consecutive
    samples and is located at the first sample of that run; it clears after
    the same number of positive samples.  Collapse proximity fires once per
    alarm episode when Pi2 drops below the threshold.
    """
    if hysteresis < 1:
        raise ValueError("hysteresis must be at least 1")
    events: list[AlarmEvent] = []
    alarmed = near_collapse = False
    neg = pos = 0
    run_start = 0
    for k, (v, t) in enumerate(zip(pi2.values, pi2.available_at)):
        if np.isnan(v):
            continue
        if v < 0:
            if neg == 0:
                run_start = k
            neg, pos = neg + 1, 0
        elif v > 0:
            if pos == 0:
                run_start = k
            neg, pos = 0, pos + 1
        else:
            neg = pos = 0
        if not alarmed and neg >= hysteresis:
            alarmed = True
            events.append(AlarmEvent(AlarmKind.ONSET, float(pi2.axis[run_start]), pi2.bus,
                                     float(v), float(t)))
        elif alarmed and pos >= hysteresis:
            alarmed = near_collapse = False
            events.append(AlarmEvent(AlarmKind.CLEARED, float(pi2.axis[run_start]), pi2.bus,
                                     float(v), float(t)))
        if alarmed and not near_collapse and v < collapse_threshold:
            near_collapse = True
            events.append(AlarmEvent(AlarmKind.COLLAPSE_PROXIMITY, float(pi2.axis[k]), pi2.bus,
                                     float(v), float(t)))
    return events


def write_alarms(events, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "bus", "kind", "pi2"])
    for e in events:
        w.writerow([repr(e.axis_value), e.bus, e.kind.value, repr(e.pi2_value)])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text
