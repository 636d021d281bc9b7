"""Delay-adaptive barrier-function safety filtering.

A library plus CLI simulator for safety-critical control of systems
with an unknown constant input delay.  It estimates the delay online,
observes the delay-induced input disturbance, shrinks a guaranteed
delay-uncertainty interval by set-membership scans, and enforces a
barrier-function constraint whose robustness margin tracks the interval
width, so conservatism can only decrease over a run.
"""

__version__ = "0.1.0"

from .buffer import TimedInputBuffer
from .dynamics import PlantState, SystemModel, Trajectory, simulate, step
from .errors import (ConfigError, ContractViolationError, DacbfError,
                     DivergenceError, LookbackError, NonMonotoneTimeError,
                     TrajectoryRangeError)
from .estimator import DelayEstimate, proj
from .observer import DisturbanceObserverState, GainFunctions, envelope
from .bounds import DelayBoundSet, PredictionErrorBudget, d_tilde_max
from .predictor import PredictorConfig, PredictionResult
from .safety import BarrierFunction, FilterResult, SafetyMargins, filter_input
from .truck import LeadProfile, TruckParams

__all__ = [
    "__version__",
    "TimedInputBuffer",
    "PlantState", "SystemModel", "Trajectory", "simulate", "step",
    "DacbfError", "ConfigError", "ContractViolationError", "DivergenceError",
    "LookbackError", "NonMonotoneTimeError", "TrajectoryRangeError",
    "DelayEstimate", "proj",
    "DisturbanceObserverState", "GainFunctions", "envelope",
    "DelayBoundSet", "PredictionErrorBudget", "d_tilde_max",
    "PredictorConfig", "PredictionResult",
    "BarrierFunction", "FilterResult", "SafetyMargins", "filter_input",
    "LeadProfile", "TruckParams",
]
