"""scikit-learn style wrappers around the index functions.

They let the indices sit in a ``Pipeline`` or be cloned with ``get_params``;
the numerics live in :mod:`lsvsi.vsi`, :mod:`lsvsi.baselines` and
:mod:`lsvsi.monitor`.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .baselines import impedance_ratio_index, load_current, thevenin_fit
from .monitor import AlarmKind, FilterConfig, detect_onset, ld_vsi
from .vsi import evaluate, noload_reference


class LSVSITransformer(TransformerMixin, BaseEstimator):
    """Maps a sequence of :class:`LocalMeasurement` to ``[pi1_raw, pi1_norm]`` rows.

    With ``normalization="stale"`` the no-load reference is frozen at ``fit``
    from the first measurement; ``"refreshed"`` rebuilds it per snapshot.
    """

    def __init__(self, normalization: str = "refreshed"):
        self.normalization = normalization

    def fit(self, X, y=None):
        if self.normalization not in ("refreshed", "stale"):
            raise ValueError("normalization must be 'refreshed' or 'stale'")
        X = list(X)
        if not X:
            raise ValueError("need at least one measurement")
        self.reference_ = noload_reference(X[0]) if self.normalization == "stale" else None
        self.bus_ = X[0].bus
        return self

    def transform(self, X):
        if not hasattr(self, "bus_"):
            raise NotFittedError("LSVSITransformer is not fitted")
        out = [evaluate(m, self.reference_) for m in X]
        return np.array([[r.pi1_raw, r.pi1_norm] for r in out]).reshape(-1, 2)


class TheveninIndexEstimator(BaseEstimator):
    """Local Thevenin equivalent fitted on ``(V, I_load)`` rows.

    ``X`` is a complex array of shape ``(n, 2)``; the last ``window_size`` rows
    enter the least-squares fit.  ``predict`` gives the impedance-ratio index
    of each row against the fitted ``z_th_``.
    """

    def __init__(self, window_size: int = 8):
        self.window_size = window_size

    @staticmethod
    def from_measurements(ms) -> np.ndarray:
        return np.array([[m.v_phasor, load_current(m)] for m in ms], dtype=complex)

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=complex)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n, 2): voltage and load current")
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        win = X[-self.window_size:]
        est = thevenin_fit(win[:, 0], win[:, 1])
        self.e_th_, self.z_th_, self.conditioning_ = est.e_th, est.z_th, est.conditioning
        return self

    def predict(self, X):
        if not hasattr(self, "z_th_"):
            raise NotFittedError("TheveninIndexEstimator is not fitted")
        X = np.asarray(X, dtype=complex)
        return np.array([impedance_ratio_index(self.z_th_, v, i) for v, i in X])


class LDVSIDetector(BaseEstimator):
    """Onset detector over ``X = [[P, Pi1], ...]`` sampled at a fixed period.

    ``predict`` labels each input sample 0 (normal), 1 (onset alarm active)
    or 2 (collapse proximity), using the time each alarm became available.
    """

    def __init__(self, window_samples: int = 10, hysteresis: int = 3,
                 collapse_threshold: float = -50.0, sample_period: float = 1.0):
        self.window_samples = window_samples
        self.hysteresis = hysteresis
        self.collapse_threshold = collapse_threshold
        self.sample_period = sample_period

    def _config(self) -> FilterConfig:
        return FilterConfig(window_samples=self.window_samples, sample_period=self.sample_period)

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have shape (n, 2): demand and Pi1")
        axis = np.arange(len(X)) * self.sample_period
        self.pi2_ = ld_vsi(axis, X[:, 0], X[:, 1], self._config())
        self.alarms_ = detect_onset(self.pi2_, self.hysteresis, self.collapse_threshold)
        return self

    def predict(self, X):
        self.fit(X)
        n = len(np.asarray(X))
        state = np.zeros(n, dtype=int)
        level = {AlarmKind.ONSET: 1, AlarmKind.COLLAPSE_PROXIMITY: 2, AlarmKind.CLEARED: 0}
        for e in self.alarms_:
            k = int(round(e.fired_at / self.sample_period))
            state[k:] = level[e.kind]
        return state

    def fit_predict(self, X, y=None):
        return self.predict(X)
