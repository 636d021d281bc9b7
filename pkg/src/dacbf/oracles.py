"""Brute-force reference implementations used by the test suite.

Each oracle validates a bound or solver against an independent route:
dense grids instead of bisection, Monte-Carlo trials of the literal
inequalities instead of the algebra that produced them, and a
grid-scanned delay-free barrier filter.  None of them call the
production code path they check (the shared dynamics kernels are the
one sanctioned overlap), and each soundness oracle has a negative
control: understating the premise must produce violations, proving the
check can fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import SystemModel
from .observer import GainFunctions, envelope, initial_state, observer_step
from .safety import BarrierFunction
from .truck import TruckParams, observer_gains, truck_model


@dataclass(frozen=True)
class OracleReport:
    name: str
    samples: int
    violations: int
    max_gap: float       # largest (checked quantity - bound); negative when sound
    tolerance: float

    def row(self) -> str:
        return (f"{self.name},{self.samples},{self.violations},"
                f"{self.max_gap:.17g},{self.tolerance:.17g}")


def nlp_grid_oracle(ep_fn: Callable[[float], float], budget_total: float,
                    lo: float, hi: float, n: int) -> tuple[float, float]:
    """Extreme budget-feasible grid points over ``[lo, hi]``.

    Returns ``(lo, hi)`` unchanged when every point is feasible and
    ``(nan, nan)`` when none is.
    """
    grid = np.linspace(lo, hi, n)
    feas = np.array([ep_fn(float(d)) <= budget_total for d in grid])
    idx = np.flatnonzero(feas)
    if idx.size == 0:
        return math.nan, math.nan
    lo_star = lo if idx[0] == 0 else float(grid[idx[0]])
    hi_star = hi if idx[-1] == n - 1 else float(grid[idx[-1]])
    return lo_star, hi_star


def _zoh_at(times: np.ndarray, vals: np.ndarray, tau: float) -> float:
    if tau < times[0]:
        return 0.0
    idx = int(np.searchsorted(times, tau, side="right")) - 1
    return float(vals[idx, 0])


def _random_signal(rng: np.random.Generator, times: np.ndarray,
                   u_lo: float, u_hi: float) -> np.ndarray:
    """Ramp plus sinusoid bank, clipped to the box, held at the grid."""
    c0 = rng.uniform(-1.0, 1.0)
    c1 = rng.uniform(0.1, 0.6) * rng.choice([-1.0, 1.0])
    u = c0 + c1 * times
    for _ in range(3):
        amp = rng.uniform(0.2, 1.0)
        om = rng.uniform(0.3, 2.5)
        ph = rng.uniform(0.0, 2.0 * np.pi)
        u = u + amp * np.sin(om * times + ph)
    return np.clip(u, u_lo, u_hi).reshape(-1, 1)


def theorem1_check(params: TruckParams, n_trials: int = 100, seed: int = 2024,
                   eps_scale: float = 1.0, t_end: float = 6.0,
                   dt: float = 1e-3, rel_tol: float = 1e-9) -> OracleReport:
    """Monte-Carlo check of the trajectory-divergence bound.

    Each trial integrates the truck twice from one initial state - once
    with the true delay, once with a mismatched one - under a random
    open-loop signal, measures the realized input mismatch, and checks
    the state gap against the exponential bound at every logged time.
    ``eps_scale`` below one understates the measured mismatch and serves
    as the negative control.
    """
    model = truck_model(params)
    ks = model.kernels()
    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps) * dt
    pre = np.zeros(1)
    a = model.lipschitz_f  # constant input matrix: no input-dependent growth
    violations = 0
    max_gap = -math.inf
    children = np.random.SeedSequence(seed).spawn(n_trials)
    for ss in children:
        rng = np.random.default_rng(ss)
        u_vals = _random_signal(rng, times, params.u_min, params.u_max)
        D = rng.uniform(0.05, 0.6)
        D_hat = rng.uniform(0.05, 0.6)
        x0 = np.array([rng.uniform(20.0, 60.0), rng.uniform(4.0, 14.0),
                       rng.uniform(4.0, 14.0)])
        tx = np.empty((n_steps + 1, 3))
        ty = np.empty((n_steps + 1, 3))
        ks.rk4_delayed(x0, 0.0, n_steps, dt, D, times, u_vals, pre, 0.0, tx)
        ks.rk4_delayed(x0, 0.0, n_steps, dt, D_hat, times, u_vals, pre, 0.0, ty)
        mism = np.array([abs(_zoh_at(times, u_vals, t - D)
                             - _zoh_at(times, u_vals, t - D_hat)) for t in times])
        eps_meas = float(np.max(mism)) * eps_scale
        tk = np.arange(n_steps + 1) * dt
        bound = eps_meas * (np.exp(a * tk) - 1.0) / a  # |g| = 1 along any trajectory
        err = np.linalg.norm(tx - ty, axis=1)
        bad = err > bound * (1.0 + rel_tol) + 1e-12
        violations += int(np.count_nonzero(bad))
        max_gap = max(max_gap, float(np.max(err - bound)))
    name = "theorem1" if eps_scale == 1.0 else f"theorem1_eps_scale_{eps_scale}"
    return OracleReport(name=name, samples=n_trials * (n_steps + 1),
                        violations=violations, max_gap=max_gap, tolerance=rel_tol)


def envelope_check(params: TruckParams | None = None, n_trials: int = 50,
                   seed: int = 77, w1_scale: float = 1.0, t_end: float = 3.0,
                   dt: float = 1e-3, rel_tol: float = 1e-3) -> OracleReport:
    """Monte-Carlo check of the observer-error envelope.

    Injects a smooth sinusoid-bank disturbance with a known rate bound
    into the truck's input channel, runs the observer on the measured
    states, and compares the realized estimation error with the
    envelope.  ``w1_scale`` below one understates the rate bound (the
    negative control).
    """
    params = params or TruckParams()
    model = truck_model(params)
    gains = observer_gains()
    n_steps = int(round(t_end / dt))
    violations = 0
    max_gap = -math.inf
    children = np.random.SeedSequence(seed).spawn(n_trials)
    for ss in children:
        rng = np.random.default_rng(ss)
        n_terms = 3
        amps = rng.uniform(0.1, 0.8, n_terms)
        oms = rng.uniform(0.3, 4.0, n_terms)
        phs = rng.uniform(0.0, 2.0 * np.pi, n_terms)
        off = rng.uniform(-0.5, 0.5)
        w1_true = float(np.sum(amps * oms))

        def d_of(t):
            return off + float(np.sum(amps * np.sin(oms * t + phs)))

        alpha_h = rng.uniform(5.0, 20.0)
        c = alpha_h
        x = np.array([rng.uniform(20.0, 60.0), rng.uniform(4.0, 14.0),
                      rng.uniform(4.0, 14.0)])
        u_cmd = rng.uniform(params.u_min, params.u_max)
        obs = initial_state(gains, x, alpha_h=alpha_h, c=c,
                            w1=w1_true * w1_scale, e_d0_bound=abs(d_of(0.0)))
        for k in range(n_steps):
            t = k * dt
            e_d = abs(d_of(t) - float(obs.d_hat[0]))
            m_d = envelope(obs, t)
            if e_d > m_d * (1.0 + rel_tol) + 1e-12:
                violations += 1
            max_gap = max(max_gap, e_d - m_d)
            u = np.array([u_cmd])
            obs = observer_step(obs, gains, model, x, u, dt, t)
            # plant step with the disturbance evaluated at the RK4 stages
            k1 = model.f(x, t) + model.g(x) @ (u + d_of(t))
            x2 = x + 0.5 * dt * k1
            k2 = model.f(x2, t + 0.5 * dt) + model.g(x2) @ (u + d_of(t + 0.5 * dt))
            x3 = x + 0.5 * dt * k2
            k3 = model.f(x3, t + 0.5 * dt) + model.g(x3) @ (u + d_of(t + 0.5 * dt))
            x4 = x + dt * k3
            k4 = model.f(x4, t + dt) + model.g(x4) @ (u + d_of(t + dt))
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    name = "envelope" if w1_scale == 1.0 else f"envelope_w1_scale_{w1_scale}"
    return OracleReport(name=name, samples=n_trials * n_steps,
                        violations=violations, max_gap=max_gap, tolerance=rel_tol)


def reference_filter(bf: BarrierFunction, model: SystemModel, x, u_nom,
                     u_box, n_grid: int = 10_001, t: float = 0.0) -> np.ndarray:
    """Delay-free barrier filter by exhaustive scan (scalar input).

    Independent of the production filter: evaluates the constraint on a
    dense grid over the box and picks the feasible point closest to the
    nominal input (the largest-slack point if none is feasible).
    """
    x = np.asarray(x, dtype=float)
    u_lo, u_hi = (float(np.asarray(b).reshape(1)[0]) for b in u_box)
    hval = float(bf.h(x))
    lfh = bf.lie_f(model, x, t)
    lgh = float(bf.lie_g(model, x)[0])
    grid = np.linspace(u_lo, u_hi, n_grid)
    slack = lfh + lgh * grid - 0.0 + bf.alpha(hval)
    feas = slack >= 0.0
    if not np.any(feas):
        return np.array([grid[int(np.argmax(slack))]])
    cand = grid[feas]
    u0 = float(np.asarray(u_nom).reshape(1)[0])
    return np.array([cand[int(np.argmin(np.abs(cand - u0)))]])
