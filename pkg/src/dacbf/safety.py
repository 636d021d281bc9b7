"""Error-budget margins and the barrier-constrained input filter.

The filter enforces the barrier decrease condition at the
estimated-delay-ahead predicted state, robustified by a margin built
from two bounds: a Gronwall-style divergence bound between trajectories
driven by mismatched delayed inputs, and the variation of the reference
trajectory over the residual delay uncertainty.  Both scale with the
live uncertainty-interval width, so tightening that interval provably
never increases the margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .dynamics import SystemModel
from .errors import ContractViolationError

_LGH_ZERO = 1e-12


@dataclass(frozen=True)
class BarrierFunction:
    """Scalar barrier with its gradient, class-K rate and Lipschitz ledger."""

    h: Callable[[np.ndarray], float]
    grad_h: Callable[[np.ndarray], np.ndarray]
    alpha: Callable[[float], float]
    lip_Lfh: float
    lip_Lgh: float
    lip_alpha_h: float

    def lie_f(self, model: SystemModel, x, t: float = 0.0) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.grad_h(x) @ model.f(x, t))

    def lie_g(self, model: SystemModel, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.grad_h(x) @ model.g(x), dtype=float).reshape(model.m)


@dataclass(frozen=True)
class SafetyMargins:
    """Per-step margin ledger entering the filter constraint."""

    e_max_val: float      # trajectory-divergence bound at the lookahead horizon
    delta_y_max: float    # reference variation over the delay uncertainty
    e_tj_max: float       # their sum: the prediction-error budget
    d_e: float            # robustness margin subtracted in the constraint
    eps_max: float        # assumed input mismatch: slew bound times interval width
    a_const: float        # exponent rate in the divergence bound
    u_max: float          # input norm bound
    udot_max: float       # input slew bound

    def __post_init__(self):
        for name in ("e_max_val", "delta_y_max", "e_tj_max", "d_e", "eps_max",
                     "a_const", "u_max", "udot_max"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ContractViolationError(f"margin field {name}={v} invalid")
        if abs(self.e_tj_max - (self.e_max_val + self.delta_y_max)) > 1e-12 * max(
                1.0, self.e_tj_max):
            raise ContractViolationError("e_tj_max must equal e_max_val + delta_y_max")


class FilterResult(NamedTuple):
    u: np.ndarray
    feasible: bool
    slack: float


def growth_rate(model: SystemModel, u_max: float, eps_max: float) -> float:
    """Exponent of the divergence bound for mismatched delayed inputs."""
    return model.lipschitz_f + model.lipschitz_g * (u_max + eps_max)


def e_max(model: SystemModel, nominal_traj: Callable[[float], np.ndarray],
          t1: float, t2: float, eps_max: float, u_max: float,
          n_quad: int = 64) -> float:
    """Divergence bound between same-start trajectories with input
    mismatch at most ``eps_max``, evaluated at the window end ``t2``.

    Trapezoid quadrature of the exponentially weighted input-matrix norm
    along the reference trajectory.
    """
    if t2 < t1:
        raise ContractViolationError("need t1 <= t2")
    if t2 == t1 or eps_max == 0.0:
        return 0.0
    a = growth_rate(model, u_max, eps_max)
    taus = np.linspace(t1, t2, n_quad)
    gn = np.array([np.linalg.norm(model.g(np.asarray(nominal_traj(tau), dtype=float)), 2)
                   for tau in taus])
    w = np.exp(a * (t2 - taus)) * gn
    return eps_max * float(np.trapezoid(w, taus))


def e_max_const_g(model: SystemModel, g_norm: float, t1: float, t2: float,
                  eps_max: float, u_max: float) -> float:
    """Closed form of :func:`e_max` when ``g`` is state-independent."""
    if t2 < t1:
        raise ContractViolationError("need t1 <= t2")
    a = growth_rate(model, u_max, eps_max)
    w = t2 - t1
    if a == 0.0:
        return eps_max * g_norm * w
    return eps_max * g_norm * (math.exp(a * w) - 1.0) / a


def delta_y_max(model: SystemModel, y_traj: Callable[[float], np.ndarray],
                t: float, d_hat: float, d_tilde_max: float,
                n_scan: int = 41) -> float:
    """Largest reference-trajectory displacement over the uncertainty span.

    Scans ``n_scan`` uniformly spaced offsets in
    ``[-d_tilde_max, d_tilde_max]`` around the lookahead point.
    ``y_traj`` must be defined on the full scanned span and may raise
    ``TrajectoryRangeError`` otherwise.
    """
    if d_tilde_max < 0.0:
        raise ContractViolationError("d_tilde_max must be non-negative")
    if d_tilde_max == 0.0:
        return 0.0
    center = np.asarray(y_traj(t + d_hat), dtype=float)
    taus = t + d_hat + np.linspace(-d_tilde_max, d_tilde_max, n_scan)
    try:  # trajectories backed by dense grids evaluate the scan in one call
        ys = np.asarray(y_traj(taus), dtype=float)
        if ys.shape == (n_scan, center.shape[0]):
            return float(np.max(np.linalg.norm(ys - center, axis=1)))
    except (TypeError, ValueError):
        pass
    worst = 0.0
    for tau in taus:
        y = np.asarray(y_traj(float(tau)), dtype=float)
        worst = max(worst, float(np.linalg.norm(y - center)))
    return worst


def robust_margin(bf: BarrierFunction, e_tj_max: float, u_norm: float) -> float:
    """Constraint margin: Lipschitz ledger applied to the error budget."""
    return (bf.lip_Lfh + bf.lip_alpha_h) * e_tj_max + bf.lip_Lgh * e_tj_max * u_norm


def filter_input(bf: BarrierFunction, model: SystemModel, x_pred, u_nom,
                 d_e: float, u_box, t_pred: float = 0.0) -> FilterResult:
    """Minimal-deviation input satisfying the robustified barrier condition.

    Solves ``min ||u - u_nom||^2`` subject to
    ``L_f h + L_g h u - d_e >= -alpha(h)`` at the predicted state and to
    the input box.  With one input this is a closed-form clamp of the
    nominal input onto the constraint half-line intersected with the
    box; with several, a single-constraint projection followed by a box
    clamp and a constraint re-check.  When the constraint and the box
    are disjoint the box point with the largest constraint slack is
    returned and the step is flagged infeasible.
    """
    x_pred = np.asarray(x_pred, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float).reshape(model.m)
    u_lo, u_hi = (np.asarray(b, dtype=float).reshape(model.m) for b in u_box)
    if np.any(u_lo > u_hi):
        raise ContractViolationError("empty input box")
    hval = float(bf.h(x_pred))
    lfh = bf.lie_f(model, x_pred, t_pred)
    lgh = bf.lie_g(model, x_pred)
    rhs = d_e - bf.alpha(hval) - lfh  # need lgh @ u >= rhs

    def slack(u):
        return float(lgh @ u) - rhs

    clamped_nom = np.minimum(np.maximum(u_nom, u_lo), u_hi)
    if model.m == 1:
        a = float(lgh[0])
        if abs(a) < _LGH_ZERO:
            ok = 0.0 >= rhs - 1e-15
            return FilterResult(clamped_nom, ok, slack(clamped_nom))
        bound = rhs / a
        if a > 0.0:
            u = min(max(max(float(u_nom[0]), bound), float(u_lo[0])), float(u_hi[0]))
            feasible = bound <= float(u_hi[0])
            if not feasible:
                u = float(u_hi[0])  # largest attainable slack
        else:
            u = min(max(min(float(u_nom[0]), bound), float(u_lo[0])), float(u_hi[0]))
            feasible = bound >= float(u_lo[0])
            if not feasible:
                u = float(u_lo[0])
        uv = np.array([u])
        return FilterResult(uv, feasible, slack(uv))

    # m > 1: project onto the constraint hyperplane, clamp, re-check.
    u = clamped_nom
    if slack(u) < 0.0:
        nrm2 = float(lgh @ lgh)
        if nrm2 < _LGH_ZERO ** 2:
            return FilterResult(clamped_nom, False, slack(clamped_nom))
        u = u_nom + lgh * (rhs - float(lgh @ u_nom)) / nrm2
        u = np.minimum(np.maximum(u, u_lo), u_hi)
    if slack(u) >= -1e-12:
        return FilterResult(u, True, slack(u))
    best = np.where(lgh > 0.0, u_hi, np.where(lgh < 0.0, u_lo, clamped_nom))
    return FilterResult(best, slack(best) >= 0.0, slack(best))
