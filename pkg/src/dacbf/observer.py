"""Nonlinear observer for the delay-induced input disturbance.

Running the plant with the estimated delay leaves a matched residual
``d(t) = u(t - D) - u(t - d_hat)`` on the input channel.  The observer
tracks it through an auxiliary state ``z`` whose drift cancels the
modeled part of the dynamics, and its estimation error admits a closed
form envelope decaying from the assumed initial error to a floor set by
the disturbance rate bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dynamics import SystemModel
from .errors import ContractViolationError


@dataclass(frozen=True)
class GainFunctions:
    """Observer gain pair: ``L_d`` must be the Jacobian of ``P``."""

    P: Callable[[np.ndarray], np.ndarray]     # state -> (m,)
    L_d: Callable[[np.ndarray], np.ndarray]   # state -> (m, n)


@dataclass(frozen=True)
class DisturbanceObserverState:
    z: np.ndarray            # auxiliary state (m,)
    d_hat: np.ndarray        # current disturbance estimate (m,)
    alpha_h: float           # observer gain
    c: float                 # Young-split constant, 0 < c < 2 * alpha_h
    w1: float                # assumed bound on the disturbance rate
    e_d0_bound: float        # assumed initial estimation error norm

    def __post_init__(self):
        if self.alpha_h <= 0.0:
            raise ContractViolationError("alpha_h must be positive")
        if not (0.0 < self.c < 2.0 * self.alpha_h):
            raise ContractViolationError("need 0 < c < 2 * alpha_h")
        if self.w1 < 0.0 or self.e_d0_bound < 0.0:
            raise ContractViolationError("w1 and e_d0_bound must be non-negative")

    @property
    def k(self) -> float:
        return self.alpha_h - 0.5 * self.c


def initial_state(gains: GainFunctions, x0, alpha_h: float, c: float, w1: float,
                  e_d0_bound: float, d_hat0=None) -> DisturbanceObserverState:
    """Observer state whose initial estimate equals ``d_hat0`` (default 0)."""
    x0 = np.asarray(x0, dtype=float)
    m = np.asarray(gains.P(x0), dtype=float).shape[0]
    d0 = np.zeros(m) if d_hat0 is None else np.asarray(d_hat0, dtype=float).reshape(m)
    z0 = d0 - alpha_h * np.asarray(gains.P(x0), dtype=float)
    return DisturbanceObserverState(z=z0, d_hat=d0, alpha_h=alpha_h, c=c,
                                    w1=w1, e_d0_bound=e_d0_bound)


def observer_step(obs: DisturbanceObserverState, gains: GainFunctions,
                  model: SystemModel, x, u_delayed_by_dhat, dt: float,
                  t: float = 0.0) -> DisturbanceObserverState:
    """One explicit-Euler step of the observer.

    ``u_delayed_by_dhat`` is the input the estimated-delay model sees at
    time ``t``; ``t`` is forwarded to the drift for exogenous terms.
    """
    if dt <= 0.0:
        raise ContractViolationError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u_delayed_by_dhat, dtype=float)
    Ld = np.asarray(gains.L_d(x), dtype=float)
    P = np.asarray(gains.P(x), dtype=float)
    d_now = obs.z + obs.alpha_h * P
    xdot_model = model.f(x, t) + model.g(x) @ (u + d_now)
    z_new = obs.z - dt * obs.alpha_h * (Ld @ xdot_model)
    return replace(obs, z=z_new, d_hat=z_new + obs.alpha_h * P)


def envelope(obs: DisturbanceObserverState, t: float) -> float:
    """Estimation-error envelope at time ``t`` since observer start.

    Decays exponentially (rate ``2k``) from the assumed initial error to
    the floor ``w1 / sqrt(2 c k)``.
    """
    if t < 0.0:
        raise ContractViolationError("t must be non-negative")
    two_ck = 2.0 * obs.c * obs.k
    decay = math.exp(-2.0 * obs.k * t)
    return math.sqrt(
        (two_ck * obs.e_d0_bound ** 2 * decay + obs.w1 ** 2 * (1.0 - decay)) / two_ck
    )
