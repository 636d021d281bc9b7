"""Run orchestration: configuration, the closed control loop, sweeps, CSV export.

A run is fully determined by its :class:`RunConfig`; every number that
influences the result is materialized into the trace header, and two
runs with equal configs produce byte-identical trace bodies (no clocks,
no unordered iteration, no hidden defaults).

Modes
-----
``proposed``
    Full pipeline: delay estimator, disturbance observer, epoch-wise
    interval shrinking, margins from the live interval width.
``dacbf_baseline``
    Same filter and estimator, but the uncertainty interval stays at its
    initial width (no observer, no epochs).
``unfiltered``
    Nominal policy applied directly (box-clamped); the scenario's
    safety-criticality control.
``delay_free``
    Zero plant delay and zero margin: the plain barrier-filtered loop.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .bounds import DelayBoundSet, error_budget, prediction_error, update_bounds
from .buffer import TimedInputBuffer
from .errors import ConfigError, DivergenceError, TrajectoryRangeError
from .estimator import DelayEstimate, set_interval, update
from .observer import envelope, initial_state, observer_step
from .predictor import PredictorConfig, evaluate
from .safety import (FilterResult, delta_y_max, e_max_const_g, filter_input,
                     robust_margin)
from .truck import TruckParams, barrier, nominal, nominal_ip, observer_gains, truck_model
from ._kernels import build_closed_loop_kernel

MODES = ("dacbf_baseline", "proposed", "unfiltered", "delay_free")

STEP_COLUMNS = [
    "t", "xi", "v", "v_lead", "h", "h_pred", "lfh_pred", "lgh_pred",
    "alpha_h_pred", "u_nom", "u", "d_e", "e_max_val", "delta_y_max",
    "e_tj_max", "eps_max", "d_hat", "d_hat_pre", "rho", "set_lo", "set_hi",
    "d_tilde_max", "dist_hat", "m_d", "feasible",
]

EPOCH_COLUMNS = [
    "epoch", "t", "lo", "hi", "d_tilde_max", "residual_b",
    "disturbance_term", "budget_total", "ep_at_true_delay", "premise_ok",
    "feasible_empty", "e_tjmax_ref",
]

SUMMARY_COLUMNS = [
    "mode", "true_delay", "n_steps", "avg_h", "min_h", "min_h_all",
    "h_final", "infeasible_steps", "n_epochs", "premise_failures",
    "final_lo", "final_hi", "final_d_tilde_max", "safety_violation",
]


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: float = 40.0
    d_hat0: float = 0.0


@dataclass(frozen=True)
class ObserverConfig:
    alpha_h: float = 20.0
    c: float = 20.0
    w1_floor: float = 0.5


@dataclass(frozen=True)
class BoundsConfig:
    lo0: float = 0.0
    hi0: float = 2.0
    n_grid: int = 201
    tol: float = 1e-3
    t_update: float = 0.1
    activation: float | None = None  # defaults to beta + hi0 when unset


@dataclass(frozen=True)
class SafetyConfig:
    alpha0: float = 2.0
    n_scan: int = 41
    udot_max_ceiling: float = 0.05
    n_y_nodes: int = 257  # reference-trajectory grid resolution


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float = 20.0
    seed: int = 0
    pre_run_input: tuple[float, ...] = (0.0,)


@dataclass(frozen=True)
class RunConfig:
    scenario: TruckParams = field(default_factory=TruckParams)
    true_delay: float = 0.5
    mode: str = "proposed"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    # n_quad = beta/dt aligns the window quadrature with the input grid
    # (the delay-cost staircase is then exactly flat between its steps);
    # fd_eps spans several grid steps so differences see slope, not
    # hold-quantization noise.
    predictor: PredictorConfig = field(default_factory=lambda: PredictorConfig(
        beta=0.5, n_quad=500, fd_eps=5e-3))
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def activation_time(self) -> float:
        if self.bounds.activation is not None:
            return self.bounds.activation
        return self.predictor.beta + self.bounds.hi0


def validate(config: RunConfig) -> None:
    """Raise :class:`ConfigError` (with a field path) on any bad setting."""
    if config.mode not in MODES:
        raise ConfigError(f"unknown mode {config.mode!r}, expected one of {MODES}",
                          "mode")
    sim = config.sim
    if sim.dt <= 0.0 or sim.t_end <= 0.0:
        raise ConfigError("dt and t_end must be positive", "sim")
    n_steps = sim.t_end / sim.dt
    if abs(n_steps - round(n_steps)) > 1e-9 * max(1.0, n_steps):
        raise ConfigError("dt must divide t_end", "sim.dt")
    if config.true_delay < 0.0:
        raise ConfigError("true_delay must be non-negative", "true_delay")
    b = config.bounds
    if not (0.0 <= b.lo0 <= b.hi0):
        raise ConfigError("need 0 <= lo0 <= hi0", "bounds")
    if config.mode in ("proposed", "dacbf_baseline"):
        if not (b.lo0 <= config.true_delay <= b.hi0):
            raise ConfigError(
                f"true_delay={config.true_delay} outside initial interval "
                f"[{b.lo0}, {b.hi0}]", "true_delay")
    if b.n_grid < 2:
        raise ConfigError("n_grid must be at least 2", "bounds.n_grid")
    if b.tol <= 0.0 or b.t_update <= 0.0:
        raise ConfigError("tol and t_update must be positive", "bounds")
    beta_steps = config.predictor.beta / sim.dt
    if abs(beta_steps - round(beta_steps)) > 1e-9 * max(1.0, beta_steps):
        raise ConfigError("beta must be a multiple of dt (logged-state lookback)",
                          "predictor.beta")
    o = config.observer
    if not (0.0 < o.c < 2.0 * o.alpha_h):
        raise ConfigError("need 0 < c < 2 * alpha_h", "observer.c")
    if o.alpha_h > 0.5 / sim.dt:
        raise ConfigError("alpha_h above 1/(2 dt) destabilizes the Euler observer",
                          "observer.alpha_h")
    if o.w1_floor < 0.0:
        raise ConfigError("w1_floor must be non-negative", "observer.w1_floor")
    s = config.safety
    if s.alpha0 <= 0.0 or s.n_scan < 3 or s.udot_max_ceiling < 0.0:
        raise ConfigError("bad safety section", "safety")
    if s.n_y_nodes < 9:
        raise ConfigError("n_y_nodes too small", "safety.n_y_nodes")
    if len(sim.pre_run_input) != 1:
        raise ConfigError("scenario input is scalar", "sim.pre_run_input")


def materialize(config: RunConfig) -> dict:
    """Full config echo: every effective number, defaults included."""
    d = dataclasses.asdict(config)
    d["bounds"]["activation"] = config.activation_time()
    d["code_version"] = __version__
    return d


@dataclass
class RunTrace:
    header: dict
    steps: dict
    epochs: dict
    summary: dict

    def step(self, name: str) -> np.ndarray:
        return self.steps[name]


class _GridTraj:
    """Linear interpolation over a dense state grid, range-checked.

    Accepts scalar or array times; arrays come back as ``(len, n)``.
    """

    def __init__(self, t0: float, t1: float, nodes: np.ndarray):
        self.t0, self.t1, self.nodes = t0, t1, nodes

    def __call__(self, tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        if np.any(tau_arr < self.t0 - 1e-9) or np.any(tau_arr > self.t1 + 1e-9):
            raise TrajectoryRangeError(
                f"tau={tau} outside reference span [{self.t0}, {self.t1}]")
        if self.nodes.shape[0] == 1:
            out = np.broadcast_to(self.nodes[0], (tau_arr.shape[0],
                                                  self.nodes.shape[1])).copy()
        else:
            s = (tau_arr - self.t0) / (self.t1 - self.t0) * (self.nodes.shape[0] - 1)
            i = np.minimum(s.astype(int), self.nodes.shape[0] - 2)
            w = np.clip(s - i, 0.0, 1.0)[:, None]
            out = (1.0 - w) * self.nodes[i] + w * self.nodes[i + 1]
        return out[0] if np.isscalar(tau) or np.asarray(tau).ndim == 0 else out


def run(config: RunConfig, epoch_hook: Callable | None = None) -> RunTrace:
    """Execute one deterministic closed-loop run.

    ``epoch_hook(t, bound_set, budget, ep_fn)`` is called at every bound
    update with the live feasibility closure, before the interval is
    replaced; tests use it to cross-check the interval solver in place.
    """
    validate(config)
    params = config.scenario
    mode = config.mode
    model = truck_model(params)
    bf = barrier(params, alpha0=config.safety.alpha0)
    gains = observer_gains()
    ks = model.kernels()
    y_kernel = build_closed_loop_kernel(ks, nominal_ip(params), model.n, model.m)
    pcfg = config.predictor

    dt = config.sim.dt
    n_steps = int(round(config.sim.t_end / dt))
    plant_delay = 0.0 if mode == "delay_free" else config.true_delay
    u_lo, u_hi = params.u_box
    u_norm_max = params.u_norm_max
    udot = config.safety.udot_max_ceiling
    g_norm = float(np.linalg.norm(model.constant_g, 2))

    beta_steps = int(round(pcfg.beta / dt))
    epoch_interval = max(1, int(round(config.bounds.t_update / dt)))
    activation_step = int(math.ceil(config.activation_time() / dt - 1e-9))

    horizon = config.bounds.hi0 + pcfg.beta + 0.5
    buf = TimedInputBuffer(horizon, dt, model.m,
                           pre_run_input=np.asarray(config.sim.pre_run_input),
                           min_lookback=config.bounds.hi0 + pcfg.beta)

    states = np.empty((n_steps + 1, model.n))
    states[0] = np.asarray(params.x0, dtype=float)
    dist_log = np.zeros((n_steps + 1, model.m))

    est = DelayEstimate(d_hat=config.estimator.d_hat0, gamma=config.estimator.gamma,
                        proj_lo=config.bounds.lo0, proj_hi=config.bounds.hi0)
    w1 = max(config.observer.w1_floor, 2.0 * udot)
    obs = initial_state(gains, states[0], alpha_h=config.observer.alpha_h,
                        c=config.observer.c, w1=w1,
                        e_d0_bound=2.0 * u_norm_max)
    bset = DelayBoundSet.initial(config.bounds.lo0, config.bounds.hi0)
    frozen_width = config.bounds.hi0 - config.bounds.lo0

    cols = {name: np.zeros(n_steps) for name in STEP_COLUMNS}
    epoch_rows: list[dict] = []
    one = np.empty((2, model.n))
    x_pred_buf = np.empty(model.n)
    y_nodes = np.empty((config.safety.n_y_nodes, model.n))

    def dist_hist(tau: float) -> np.ndarray:
        idx = min(max(int(math.floor(tau / dt + 1e-9)), 0), n_steps)
        return dist_log[idx]

    filtered = mode in ("dacbf_baseline", "proposed", "delay_free")
    estimating = mode in ("dacbf_baseline", "proposed")

    for k in range(n_steps):
        t = k * dt
        x = states[k]

        rho_k = 0.0
        d_hat_pre = est.d_hat  # estimate the step's descent direction is taken at
        if estimating and k >= beta_steps:
            pres = evaluate(model, buf, x, states[k - beta_steps], t, est.d_hat, pcfg)
            rho_k = pres.rho
            est = update(est, rho_k, dt)

        if mode == "proposed":
            u_dhat = _held_sample(buf, t - est.d_hat)
            obs = observer_step(obs, gains, model, x, u_dhat, dt, t)
            dist_log[k] = obs.d_hat

        if (mode == "proposed" and k >= activation_step
                and (k - activation_step) % epoch_interval == 0):
            x_tmb = states[k - beta_steps]
            budget = error_budget(model, buf, x, x_tmb, t, est.d_hat, obs, pcfg,
                                  d_hat_traj=dist_hist)

            def ep_fn(d_cand: float) -> float:
                return prediction_error(model, buf, x, x_tmb, t, d_cand, pcfg)

            if epoch_hook is not None:
                epoch_hook(t, bset, budget, ep_fn)
            diags: list = []
            new_set = update_bounds(bset, budget, ep_fn, config.bounds.tol,
                                    config.bounds.n_grid, diagnostics=diags)
            ep_true = ep_fn(config.true_delay)
            eps_ref = udot * new_set.d_tilde_max
            e_ref = e_max_const_g(model, g_norm, 0.0,
                                  config.bounds.hi0 + new_set.d_tilde_max,
                                  eps_ref, u_norm_max)
            epoch_rows.append({
                "epoch": new_set.epoch, "t": t, "lo": new_set.lo, "hi": new_set.hi,
                "d_tilde_max": new_set.d_tilde_max,
                "residual_b": budget.residual_B,
                "disturbance_term": budget.disturbance_term,
                "budget_total": budget.total,
                "ep_at_true_delay": ep_true,
                "premise_ok": 1.0 if ep_true <= budget.total else 0.0,
                "feasible_empty": 1.0 if diags else 0.0,
                "e_tjmax_ref": e_ref,
            })
            bset = new_set
            est = set_interval(est, bset.lo, bset.hi)

        d_tilde = bset.d_tilde_max if mode == "proposed" else (
            frozen_width if mode == "dacbf_baseline" else 0.0)
        d_hat_c = est.d_hat if estimating else 0.0

        if filtered:
            eps_m = udot * d_tilde
            # ~4 ms lookahead substeps: quantization error is far below the margins
            n_sub = max(8, int(math.ceil(d_hat_c / 0.004))) if d_hat_c > 0.0 else 0
            tv, vv = buf.views() if len(buf) else (np.empty(0), np.empty((0, model.m)))
            ks.forward_committed(x, t, d_hat_c, n_sub, tv, vv,
                                 buf.pre_run_input, buf.start_time, x_pred_buf)
            x_pred = x_pred_buf
            t_lo = min(t, t + d_hat_c - d_tilde)
            t_hi = t + d_hat_c + d_tilde
            if t_hi > t_lo:
                y_kernel(x, t, d_hat_c, t_lo, t_hi, config.safety.n_y_nodes,
                         tv, vv, buf.pre_run_input, buf.start_time, u_lo, u_hi,
                         y_nodes)
                y_traj = _GridTraj(t_lo, t_hi, y_nodes)
                dy = delta_y_max(model, y_traj, t, d_hat_c, d_tilde,
                                 config.safety.n_scan)
            else:
                dy = 0.0
            e_max_v = e_max_const_g(model, g_norm, t, t + d_hat_c + d_tilde,
                                    eps_m, u_norm_max)
            e_tj = e_max_v + dy
            d_e = robust_margin(bf, e_tj, u_norm_max) if mode != "delay_free" else 0.0
            u_nom_v = nominal(params, x_pred)
            fres = filter_input(bf, model, x_pred, u_nom_v, d_e, (u_lo, u_hi),
                                t_pred=t + d_hat_c)
        else:
            eps_m = 0.0
            dy = 0.0
            e_max_v = 0.0
            e_tj = 0.0
            d_e = 0.0
            x_pred = x
            u_nom_v = nominal(params, x)
            u_cl = np.minimum(np.maximum(u_nom_v, u_lo), u_hi)
            fres = FilterResult(u=u_cl, feasible=True, slack=math.nan)

        cols["t"][k] = t
        cols["xi"][k], cols["v"][k], cols["v_lead"][k] = x
        cols["h"][k] = bf.h(x)
        cols["h_pred"][k] = bf.h(x_pred)
        cols["lfh_pred"][k] = bf.lie_f(model, x_pred, t + d_hat_c)
        cols["lgh_pred"][k] = bf.lie_g(model, x_pred)[0]
        cols["alpha_h_pred"][k] = bf.alpha(bf.h(x_pred))
        cols["u_nom"][k] = u_nom_v[0]
        cols["u"][k] = fres.u[0]
        cols["d_e"][k] = d_e
        cols["e_max_val"][k] = e_max_v
        cols["delta_y_max"][k] = dy
        cols["e_tj_max"][k] = e_tj
        cols["eps_max"][k] = eps_m
        cols["d_hat"][k] = d_hat_c
        cols["d_hat_pre"][k] = d_hat_pre if estimating else 0.0
        cols["rho"][k] = rho_k
        cols["set_lo"][k] = bset.lo if mode == "proposed" else config.bounds.lo0
        cols["set_hi"][k] = bset.hi if mode == "proposed" else config.bounds.hi0
        cols["d_tilde_max"][k] = d_tilde
        cols["dist_hat"][k] = obs.d_hat[0] if mode == "proposed" else 0.0
        cols["m_d"][k] = envelope(obs, t) if mode == "proposed" else 0.0
        cols["feasible"][k] = 1.0 if fres.feasible else 0.0

        buf.push(t, fres.u)
        bad = ks.rk4_delayed(x, t, 1, dt, plant_delay, *buf.views(),
                             buf.pre_run_input, buf.start_time, one)
        if bad >= 0:
            raise DivergenceError(f"divergence at step {k} (t={t})", k)
        states[k + 1] = one[1]

    epochs = {name: np.array([row[name] for row in epoch_rows])
              for name in EPOCH_COLUMNS}
    h_final = bf.h(states[n_steps])
    post = cols["t"] >= plant_delay - 1e-12
    avg_h = float(np.mean(cols["h"][post])) if np.any(post) else math.nan
    min_h_steps = float(np.min(cols["h"][post])) if np.any(post) else math.nan
    min_h = min(min_h_steps, h_final)
    summary = {
        "mode": mode,
        "true_delay": config.true_delay,
        "n_steps": n_steps,
        "avg_h": avg_h,
        "min_h": min_h,
        "min_h_all": min(float(np.min(cols["h"])), h_final),
        "h_final": h_final,
        "infeasible_steps": int(np.sum(cols["feasible"] < 0.5)),
        "n_epochs": len(epoch_rows),
        "premise_failures": int(np.sum(epochs["premise_ok"] < 0.5))
        if len(epoch_rows) else 0,
        "final_lo": bset.lo if mode == "proposed" else config.bounds.lo0,
        "final_hi": bset.hi if mode == "proposed" else config.bounds.hi0,
        "final_d_tilde_max": d_tilde
        if mode != "delay_free" else 0.0,
        "safety_violation": int(min_h < -1e-6),
    }
    return RunTrace(header=materialize(config), steps=cols, epochs=epochs,
                    summary=summary)


def _held_sample(buf: TimedInputBuffer, tau: float) -> np.ndarray:
    """Buffer sample with the newest command held beyond its own step."""
    if len(buf) == 0:
        return buf.pre_run_input.copy()
    return buf.sample(min(tau, buf.newest_time))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def export(trace: RunTrace, path: str) -> None:
    """Write ``steps.csv``, ``epochs.csv``, ``summary.csv`` and ``header.json``.

    Floats carry 17 significant digits so re-reading reproduces the
    in-memory values exactly.
    """
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "steps.csv"), "w") as fh:
        fh.write(",".join(STEP_COLUMNS) + "\n")
        n = trace.steps["t"].shape[0]
        for k in range(n):
            fh.write(",".join(_fmt(float(trace.steps[c][k]))
                              for c in STEP_COLUMNS) + "\n")
    with open(os.path.join(path, "epochs.csv"), "w") as fh:
        fh.write(",".join(EPOCH_COLUMNS) + "\n")
        n = trace.epochs["epoch"].shape[0] if trace.epochs["epoch"].size else 0
        for k in range(n):
            fh.write(",".join(_fmt(float(trace.epochs[c][k]))
                              for c in EPOCH_COLUMNS) + "\n")
    with open(os.path.join(path, "summary.csv"), "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        fh.write(",".join(_fmt(trace.summary[c]) for c in SUMMARY_COLUMNS) + "\n")
    with open(os.path.join(path, "header.json"), "w") as fh:
        json.dump(trace.header, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON-serializable: {type(o)}")


def _sweep_cell(args):
    config, out_dir = args
    try:
        trace = run(config)
        if out_dir is not None:
            export(trace, out_dir)
        return trace.summary
    except Exception as exc:  # noqa: BLE001 - cell isolation by design
        return {"error": f"{type(exc).__name__}: {exc}"}


def sweep(base: RunConfig, delays, modes=("dacbf_baseline", "proposed"),
          out: str | None = None, jobs: int = 1) -> dict:
    """Run every (mode, delay) cell and tabulate the mean barrier values.

    Returns ``{"cells": {(mode, delay): summary-or-error}, "table": str}``.
    Failed cells are marked without aborting the rest.
    """
    if not delays:
        raise ConfigError("delays list must be non-empty", "delays")
    work = []
    for mode in modes:
        for d in delays:
            cfg = dataclasses.replace(base, mode=mode, true_delay=float(d))
            cell_dir = (os.path.join(out, f"{mode}_D{d:g}") if out else None)
            work.append(((mode, float(d)), (cfg, cell_dir)))
    cells: dict = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for (key, _), res in zip(work, pool.map(_sweep_cell,
                                                    [w[1] for w in work])):
                cells[key] = res
    else:
        for key, payload in work:
            cells[key] = _sweep_cell(payload)

    lines = ["mode," + ",".join(f"D={d:g}" for d in delays) + ",avg"]
    averages = {}
    for mode in modes:
        vals = []
        for d in delays:
            s = cells[(mode, float(d))]
            vals.append(s["avg_h"] if "avg_h" in s else math.nan)
        averages[mode] = float(np.mean(vals))
        lines.append(mode + "," + ",".join(_fmt(v) for v in vals)
                     + "," + _fmt(averages[mode]))
    if "proposed" in modes and "dacbf_baseline" in modes:
        ratios = []
        for d in delays:
            p = cells[("proposed", float(d))].get("avg_h", math.nan)
            b = cells[("dacbf_baseline", float(d))].get("avg_h", math.nan)
            ratios.append(p / b if (b and not math.isnan(b)) else math.nan)
        overall = averages["proposed"] / averages["dacbf_baseline"]
        lines.append("ratio_proposed_over_baseline,"
                     + ",".join(_fmt(r) for r in ratios) + "," + _fmt(overall))
    table = "\n".join(lines) + "\n"
    if out is not None:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "sweep_summary.csv"), "w") as fh:
            fh.write(table)
    return {"cells": cells, "table": table}
