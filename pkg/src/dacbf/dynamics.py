"""Control-affine system interface and deterministic fixed-step integration.

Systems have the form ``xdot = f(x, t) + g(x) u(t - D)`` with a constant
input lag ``D``.  The drift takes the time argument so scenarios can
route known exogenous signals (for example a lead vehicle's
acceleration) through ``f``; the input matrix ``g`` is state-only.
Norms are Euclidean throughout, and the declared Lipschitz constants
refer to that norm over the scenario's admissible box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .buffer import TimedInputBuffer
from .errors import ContractViolationError, DivergenceError, LookbackError


@dataclass(frozen=True)
class SystemModel:
    """Control-affine model with a declared Lipschitz ledger.

    ``f_ip`` / ``g_ip`` are optional in-place twins (``f_ip(x, t, out)``,
    ``g_ip(x, out)``); when both are numba-compiled the integration
    kernels for this model compile too.  Semantics must match ``f``/``g``
    exactly — the test suite cross-checks them.
    """

    n: int
    m: int
    f: Callable[[np.ndarray, float], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    lipschitz_f: float
    lipschitz_g: float
    f_ip: Callable | None = None
    g_ip: Callable | None = None
    constant_g: np.ndarray | None = None  # set when g(x) is state-independent

    def kernels(self) -> _kernels.KernelSet:
        ks = getattr(self, "_kernel_cache", None)
        if ks is None:
            if self.f_ip is not None and self.g_ip is not None:
                f_ip, g_ip = self.f_ip, self.g_ip
            else:
                f_ip, g_ip = _kernels.wrap_inplace(self.f, self.g)
            ks = _kernels.build_kernels(f_ip, g_ip, self.n, self.m)
            object.__setattr__(self, "_kernel_cache", ks)
        return ks


@dataclass(frozen=True)
class PlantState:
    t: float
    x: np.ndarray


class Trajectory(Sequence):
    """Dense fixed-step trajectory; indexable as ``PlantState`` records."""

    def __init__(self, times: np.ndarray, states: np.ndarray):
        self.times = times
        self.states = states

    def __len__(self) -> int:
        return self.times.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trajectory(self.times[i], self.states[i])
        return PlantState(float(self.times[i]), self.states[i].copy())

    def state_at(self, tau: float) -> np.ndarray:
        """State at a grid time ``tau`` (nearest-node lookup)."""
        k = int(round((tau - self.times[0]) / (self.times[1] - self.times[0])))
        if k < 0 or k >= len(self):
            raise LookbackError(f"tau={tau} outside trajectory span")
        return self.states[k].copy()


def _require_coverage(buffer: TimedInputBuffer, tau: float) -> None:
    if tau < buffer.start_time:
        return  # pre-run convention answers this
    if len(buffer) == 0 or tau < buffer.oldest_time:
        raise LookbackError(
            f"input history does not cover tau={tau} "
            f"(retained from {buffer.oldest_time if len(buffer) else 'nothing'})"
        )


def step(model: SystemModel, state: PlantState, buffer: TimedInputBuffer,
         delay: float, dt: float) -> PlantState:
    """One classical RK4 step of the delayed dynamics.

    The delayed input ``u(t - delay)`` is read from the buffer at the
    step start and held across the stages.
    """
    if dt <= 0.0:
        raise ContractViolationError("dt must be positive")
    _require_coverage(buffer, state.t - delay)
    times, vals = buffer.views()
    traj = np.empty((2, model.n))
    bad = model.kernels().rk4_delayed(
        np.asarray(state.x, dtype=float), state.t, 1, dt, delay,
        times, vals, buffer.pre_run_input, buffer.start_time, traj,
    )
    if bad >= 0:
        raise DivergenceError(f"non-finite state after step at t={state.t}", 0)
    return PlantState(state.t + dt, traj[1])


def simulate(model: SystemModel, x0, controller: Callable[[float, np.ndarray], np.ndarray],
             delay: float, t_end: float, dt: float,
             pre_run_input=None, horizon: float | None = None) -> Trajectory:
    """Closed-loop fixed-step simulation harness.

    ``controller(t, x)`` is invoked once per step and its output pushed
    into the run's input buffer before the plant is advanced, so the
    applied signal is zero-order held at the step rate.

    Raises
    ------
    DivergenceError
        If any step produces a non-finite state (carries the step index).
    """
    n_steps_f = t_end / dt
    n_steps = int(round(n_steps_f))
    if abs(n_steps_f - n_steps) > 1e-9 * max(1.0, n_steps_f) or n_steps < 1:
        raise ContractViolationError(f"dt={dt} does not divide t_end={t_end}")
    if horizon is None:
        horizon = delay + max(10 * dt, 0.05 * max(delay, dt))
    buf = TimedInputBuffer(horizon, dt, model.m, pre_run_input=pre_run_input)
    ks = model.kernels()
    x0 = np.asarray(x0, dtype=float).reshape(model.n)

    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    states = np.empty((n_steps + 1, model.n))
    states[0] = x0
    one = np.empty((2, model.n))
    for k in range(n_steps):
        t = k * dt
        u = np.asarray(controller(t, states[k]), dtype=float).reshape(model.m)
        buf.push(t, u)
        _require_coverage(buf, t - delay)
        tv, vv = buf.views()
        bad = ks.rk4_delayed(states[k], t, 1, dt, delay, tv, vv,
                             buf.pre_run_input, buf.start_time, one)
        if bad >= 0:
            raise DivergenceError(f"divergence at step {k} (t={t})", k)
        states[k + 1] = one[1]
    return Trajectory(times, states)


def lipschitz_gap(model: SystemModel, low, high, n_pairs: int = 10_000,
                  seed: int = 0, t: float = 0.0) -> tuple[float, float]:
    """Largest sampled ratios ``|f(x)-f(y)|/|x-y|`` and the same for ``g``.

    Sampling check for the declared constants over the admissible box
    ``[low, high]``; the drift is compared at a common time so exogenous
    terms cancel.
    """
    rng = np.random.default_rng(seed)
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    xs = rng.uniform(low, high, size=(n_pairs, model.n))
    ys = rng.uniform(low, high, size=(n_pairs, model.n))
    worst_f = 0.0
    worst_g = 0.0
    for x, y in zip(xs, ys):
        dxy = float(np.linalg.norm(x - y))
        if dxy < 1e-12:
            continue
        rf = float(np.linalg.norm(model.f(x, t) - model.f(y, t))) / dxy
        rg = float(np.linalg.norm(model.g(x) - model.g(y), 2)) / dxy
        worst_f = max(worst_f, rf)
        worst_g = max(worst_g, rg)
    return worst_f, worst_g
