"""Connected-truck following scenario.

A follower truck keeps a gap to a lead vehicle over V2V with an unknown
actuation lag.  State is ``[gap, follower speed, lead speed]``; the
commanded acceleration acts on the follower speed only, and the lead
acceleration is a known exogenous profile routed through the drift.
The barrier keeps the gap above a stopping distance plus a headway-time
multiple of the follower speed.

All numeric defaults live in :class:`TruckParams` and are echoed into
every run header; none are physical constants, they are the scenario
calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import SystemModel
from .errors import ContractViolationError
from .observer import GainFunctions
from .safety import BarrierFunction

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class LeadProfile:
    """Piecewise-constant lead acceleration: cruise, brake window, hold."""

    brake_start: float = 5.0
    brake_end: float = 8.0
    brake_accel: float = -2.0

    def __call__(self, t: float) -> float:
        return self.brake_accel if self.brake_start <= t < self.brake_end else 0.0


@dataclass(frozen=True)
class TruckParams:
    xi_sf: float = 5.0          # stopping distance [m]
    t_headway: float = 1.0      # headway time [s]
    xi_st: float = 5.0          # standstill offset of the gap policy [m]
    k_gain: float = 2.0         # gap-policy slope [1/s]
    v_max: float = 15.0         # speed cap of the policies [m/s]
    a_gain: float = 0.4         # gap-error gain [1/s]
    b_gain: float = 0.5         # speed-error gain [1/s]
    u_min: float = -6.0         # acceleration box [m/s^2]
    u_max: float = 3.0
    lead: LeadProfile = field(default_factory=LeadProfile)
    x0: tuple[float, float, float] = (28.0, 12.0, 12.0)
    # admissible box used by the sampled Lipschitz checks
    box_low: tuple[float, float, float] = (0.0, 0.0, 0.0)
    box_high: tuple[float, float, float] = (80.0, 20.0, 20.0)

    def __post_init__(self):
        if min(self.xi_sf, self.t_headway, self.v_max) <= 0.0:
            raise ContractViolationError("xi_sf, t_headway, v_max must be positive")
        if not (self.u_min < 0.0 < self.u_max):
            raise ContractViolationError("input box must straddle zero")

    @property
    def u_box(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.u_min]), np.array([self.u_max])

    @property
    def u_norm_max(self) -> float:
        return max(abs(self.u_min), abs(self.u_max))


def truck_model(params: TruckParams) -> SystemModel:
    """Follower-relative dynamics with the lead profile folded into the drift.

    The drift Jacobian is the constant matrix with first row
    ``[0, -1, 1]``, so its Lipschitz constant is sqrt(2); the input
    matrix is constant, so its Lipschitz constant is zero.
    """
    lead = params.lead
    bs, be, ba = lead.brake_start, lead.brake_end, lead.brake_accel

    def f(x, t):
        return np.array([x[2] - x[1], 0.0, lead(t)])

    def g(x):
        return np.array([[0.0], [1.0], [0.0]])

    @njit(cache=False)
    def f_ip(x, t, out):
        out[0] = x[2] - x[1]
        out[1] = 0.0
        out[2] = ba if (bs <= t < be) else 0.0

    @njit(cache=False)
    def g_ip(x, out):
        out[0, 0] = 0.0
        out[1, 0] = 1.0
        out[2, 0] = 0.0

    return SystemModel(n=3, m=1, f=f, g=g, lipschitz_f=_SQRT2, lipschitz_g=0.0,
                       f_ip=f_ip, g_ip=g_ip,
                       constant_g=np.array([[0.0], [1.0], [0.0]]))


def barrier(params: TruckParams, alpha0: float = 1.0) -> BarrierFunction:
    """Gap barrier ``h = gap - xi_sf - t_headway * v`` with a linear rate.

    Lipschitz ledger: the drift Lie derivative is ``v_L - v`` (constant
    gradient ``[0, -1, 1]``, norm sqrt(2)); the input Lie derivative is
    the constant ``-t_headway`` (zero Lipschitz constant); the composed
    rate inherits ``alpha0`` times the barrier gradient norm.
    """
    if alpha0 <= 0.0:
        raise ContractViolationError("alpha0 must be positive")
    T = params.t_headway
    xi_sf = params.xi_sf
    grad = np.array([1.0, -T, 0.0])

    return BarrierFunction(
        h=lambda x: float(x[0] - xi_sf - T * x[1]),
        grad_h=lambda x: grad.copy(),
        alpha=lambda s: alpha0 * s,
        lip_Lfh=_SQRT2,
        lip_Lgh=0.0,
        lip_alpha_h=alpha0 * float(np.linalg.norm(grad)),
    )


def nominal(params: TruckParams, x) -> np.ndarray:
    """Gap-and-speed tracking policy for the follower.

    ``u = A (V(gap) - v) + B (W(v_L) - v)`` where both set-point
    policies saturate at ``v_max``.
    """
    x = np.asarray(x, dtype=float)
    V = min(params.k_gain * (x[0] - params.xi_st), params.v_max)
    W = min(x[2], params.v_max)
    return np.array([params.a_gain * (V - x[1]) + params.b_gain * (W - x[1])])


def nominal_ip(params: TruckParams):
    """Numba in-place twin of :func:`nominal` for the closed-loop kernels."""
    A, B, k, xi_st, v_max = (params.a_gain, params.b_gain, params.k_gain,
                             params.xi_st, params.v_max)

    @njit(cache=False)
    def u_nom(x, out):
        V = k * (x[0] - xi_st)
        if V > v_max:
            V = v_max
        W = x[2]
        if W > v_max:
            W = v_max
        out[0] = A * (V - x[1]) + B * (W - x[1])

    return u_nom


def observer_gains() -> GainFunctions:
    """Gains for the scalar input channel: ``P(x) = v``, ``L_d = [0, 1, 0]``.

    With the constant input matrix this makes ``L_d g = 1``, meeting the
    quadratic observer condition with equality.
    """
    return GainFunctions(
        P=lambda x: np.array([float(x[1])]),
        L_d=lambda x: np.array([[0.0, 1.0, 0.0]]),
    )
