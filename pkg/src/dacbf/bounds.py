"""Set-membership shrinking of the delay-uncertainty interval.

Each update epoch bounds the window-reconstruction mismatch that the
true delay can produce (a measured residual at the estimated delay plus
an observer-error term), then keeps exactly the candidate delays whose
mismatch stays under that budget.  The surviving set is an interval
enclosure found by a dense grid scan with bisection-refined endpoints;
its width is the live worst-case delay-estimation error fed to the
safety margins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .buffer import TimedInputBuffer
from .dynamics import SystemModel, _require_coverage
from .errors import ContractViolationError
from .observer import DisturbanceObserverState, envelope
from .predictor import PredictorConfig

log = logging.getLogger("dacbf.bounds")


@dataclass(frozen=True)
class DelayBoundSet:
    """Interval of delays still consistent with every observed window."""

    lo: float
    hi: float
    epoch: int
    d_tilde_max: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi):
            raise ContractViolationError(f"invalid interval [{self.lo}, {self.hi}]")
        if abs(self.d_tilde_max - (self.hi - self.lo)) > 0.0:
            raise ContractViolationError("d_tilde_max must equal hi - lo")

    @staticmethod
    def initial(lo: float, hi: float) -> "DelayBoundSet":
        return DelayBoundSet(lo=lo, hi=hi, epoch=0, d_tilde_max=hi - lo)


@dataclass(frozen=True)
class PredictionErrorBudget:
    residual_B: float         # measured reconstruction residual at the estimate
    disturbance_term: float   # observer-error contribution over the window
    total: float

    def __post_init__(self):
        if self.residual_B < 0.0 or self.disturbance_term < 0.0:
            raise ContractViolationError("budget terms must be non-negative")


def prediction_error(model: SystemModel, buffer: TimedInputBuffer, x_t,
                     x_t_minus_beta, t: float, d_candidate: float,
                     cfg: PredictorConfig) -> float:
    """Norm of the window-reconstruction mismatch for a candidate delay."""
    from .predictor import predict_state

    xp = predict_state(model, buffer, x_t_minus_beta, t, d_candidate, cfg)
    return float(np.linalg.norm(xp - np.asarray(x_t, dtype=float)))


def error_budget(model: SystemModel, buffer: TimedInputBuffer, x_t, x_t_minus_beta,
                 t: float, d_hat: float, obs: DisturbanceObserverState,
                 cfg: PredictorConfig,
                 d_hat_traj: Callable[[float], np.ndarray] | None = None,
                 ) -> PredictionErrorBudget:
    """Mismatch budget that the true delay is guaranteed to satisfy.

    The residual part re-runs the reconstruction at the estimated delay
    and folds the estimated disturbance into the window integral; the
    second part integrates the observer's error envelope (weighted by
    the largest singular value of ``g`` along the window).  Envelope
    times are measured from the observer start.  ``d_hat_traj`` maps a
    time in ``[t - beta, t]`` to the disturbance estimate logged then;
    by default the current estimate is held across the window.
    """
    x_t = np.asarray(x_t, dtype=float)
    _require_coverage(buffer, t - d_hat - cfg.beta)
    times, vals = buffer.views()
    path = np.empty((cfg.n_quad + 1, model.n))
    model.kernels().predict_path(
        np.asarray(x_t_minus_beta, dtype=float), t, cfg.beta, d_hat, cfg.n_quad,
        times, vals, buffer.pre_run_input, buffer.start_time, path,
    )
    ys = np.linspace(0.0, 1.0, cfg.n_quad + 1)
    taus = t - cfg.beta * (1.0 - ys)
    g_nodes = [np.asarray(model.g(path[k]), dtype=float) for k in range(len(ys))]
    if d_hat_traj is None:
        d_nodes = [obs.d_hat for _ in ys]
    else:
        d_nodes = [np.asarray(d_hat_traj(tau), dtype=float) for tau in taus]
    gd = np.stack([G @ d for G, d in zip(g_nodes, d_nodes)])
    corr = cfg.beta * np.trapezoid(gd, ys, axis=0)
    residual = float(np.linalg.norm(path[-1] - x_t + corr))

    sig = np.array([np.linalg.norm(G, 2) for G in g_nodes])
    md = np.array([envelope(obs, max(tau, 0.0)) for tau in taus])
    dist_term = cfg.beta * float(np.trapezoid(sig * md, ys))
    return PredictionErrorBudget(residual_B=residual, disturbance_term=dist_term,
                                 total=residual + dist_term)


def _bisect_edge(ep_fn, total: float, a: float, b: float, tol: float,
                 feasible_at_b: bool) -> tuple[float, float]:
    """Shrink a bracket with one feasible and one infeasible end to ``tol``.

    Returns the bracket ``(a, b)``; ``feasible_at_b`` says which end
    satisfies the budget.
    """
    while b - a > tol:
        mid = 0.5 * (a + b)
        if (ep_fn(mid) <= total) == feasible_at_b:
            b = mid
        else:
            a = mid
    return a, b


def update_bounds(bound_set: DelayBoundSet, budget: PredictionErrorBudget,
                  ep_fn: Callable[[float], float], tol: float,
                  n_grid: int = 201,
                  diagnostics: list | None = None) -> DelayBoundSet:
    """Shrink the interval to an enclosure of the budget-feasible delays.

    Scans ``n_grid`` candidates across the current interval, then
    bisects each boundary bracket down to ``tol``, keeping the outer
    (infeasible-side) endpoints so discretization can only widen the
    result, never exclude a feasible delay.  Disconnected feasible sets
    are enclosed, not resolved.  An empty scan leaves the interval
    unchanged and records a diagnostic: a numerically failed budget must
    not destroy the last sound enclosure.
    """
    if bound_set.lo > bound_set.hi:
        raise ContractViolationError("bound set inverted")
    if n_grid < 2 or bound_set.hi == bound_set.lo:
        return DelayBoundSet(bound_set.lo, bound_set.hi, bound_set.epoch + 1,
                             bound_set.hi - bound_set.lo)
    grid = np.linspace(bound_set.lo, bound_set.hi, n_grid)
    feas = np.array([ep_fn(float(d)) <= budget.total for d in grid])
    idx = np.flatnonzero(feas)
    if idx.size == 0:
        msg = (f"epoch {bound_set.epoch + 1}: no feasible delay in "
               f"[{bound_set.lo}, {bound_set.hi}] under budget {budget.total:.3e}; "
               "interval left unchanged")
        log.warning(msg)
        if diagnostics is not None:
            diagnostics.append({"event": "empty_feasible_set",
                                "epoch": bound_set.epoch + 1,
                                "budget_total": budget.total})
        return DelayBoundSet(bound_set.lo, bound_set.hi, bound_set.epoch + 1,
                             bound_set.hi - bound_set.lo)
    i0, i1 = int(idx[0]), int(idx[-1])
    if i0 == 0:
        new_lo = bound_set.lo
    else:
        a, _b = _bisect_edge(ep_fn, budget.total, float(grid[i0 - 1]),
                             float(grid[i0]), tol, feasible_at_b=True)
        new_lo = a
    if i1 == n_grid - 1:
        new_hi = bound_set.hi
    else:
        _a, b = _bisect_edge(ep_fn, budget.total, float(grid[i1]),
                             float(grid[i1 + 1]), tol, feasible_at_b=False)
        new_hi = b
    return DelayBoundSet(lo=new_lo, hi=new_hi, epoch=bound_set.epoch + 1,
                         d_tilde_max=new_hi - new_lo)


def d_tilde_max(bound_set: DelayBoundSet) -> float:
    """Width of the interval: the worst-case delay-estimation error."""
    return bound_set.hi - bound_set.lo
