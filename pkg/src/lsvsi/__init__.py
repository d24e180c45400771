"""Local voltage stability indices from phasor measurements."""

__version__ = "0.1.0"

from .case import (Branch, Bus, BusKind, Case, CaseSyntaxError, CaseValidationError, Generator,
                   LTCBranch, ZipLoad, build_admittance, builtin_case, format_case, load_case,
                   parse_case)
from .powerflow import LoadingDirection, PFOptions, PFSolution, solve_power_flow
from .continuation import (CPFOptions, Event, EventKind, PVTrace, Termination, find_max_power_point,
                           find_snbp, resample, trace_pv_curve)
from .measurements import (LocalMeasurement, NoiseModel, add_noise, extract_local, read_stream,
                           write_stream)
from .vsi import (CircleGeometry, HParams, VSIResult, circle_geometry, compute_h_params, evaluate,
                  ls_vsi, noload_reference, pi1_raw)
from .baselines import IndexSeries, cti, dvsi, lti, lti_series, nli
from .monitor import AlarmEvent, AlarmKind, FilterConfig, detect_onset, filtered_increment, ld_vsi
from .harness import (ScenarioConfig, ScenarioError, noise_study, preset, rank_buses,
                      run_scenario)

__all__ = [name for name in dir() if not name.startswith("_")]
