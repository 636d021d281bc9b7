"""Integration kernels shared by the plant, predictors and bound scans.

The same source builds two flavours of every kernel: a numba-compiled
closure when the model supplies jitted in-place callbacks, and a plain
Python closure otherwise.  Hot paths (the closed-loop runner, the
delay-candidate grids) use the compiled flavour; small analytic test
models fall through to the Python one with identical semantics.

Conventions baked into every kernel:

* inputs are sampled at the start of each integration substep and held
  across the four Runge-Kutta stages (zero-order hold);
* the drift callback may depend on time (exogenous signals live there)
  and is evaluated at the stage times;
* queries before the run start resolve to the configured pre-run input;
* state scratch is preallocated per call, so the inner loops allocate
  nothing.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
from numba import njit
from numba.extending import is_jitted


class KernelSet(NamedTuple):
    zoh_into: Callable
    rk4_held_step: Callable
    rk4_delayed: Callable
    predict_batch: Callable
    predict_path: Callable
    forward_committed: Callable
    jitted: bool


def wrap_inplace(f_alloc: Callable, g_alloc: Callable):
    """Adapt allocating ``f(x, t)`` / ``g(x)`` callbacks to the in-place
    convention used by the kernels (Python path only)."""

    def f_ip(x, t, out):
        out[:] = f_alloc(x, t)

    def g_ip(x, out):
        out[:, :] = g_alloc(x)

    return f_ip, g_ip


def build_kernels(f_ip: Callable, g_ip: Callable, n: int, m: int) -> KernelSet:
    """Build the kernel set for one model.

    ``f_ip(x, t, out)`` writes the drift, ``g_ip(x, out)`` the input
    matrix.  If both are numba dispatchers the whole set is compiled.
    """
    jitted = is_jitted(f_ip) and is_jitted(g_ip)
    dec = njit(cache=False) if jitted else (lambda fn: fn)

    @dec
    def zoh_into(times, vals, tau, pre_u, start_t, out):
        # Zero-order hold; beyond the newest sample the newest value
        # extends (the hold interval of the last command).
        if tau < start_t or times.shape[0] == 0:
            for j in range(out.shape[0]):
                out[j] = pre_u[j]
            return
        idx = np.searchsorted(times, tau, side="right") - 1
        if idx < 0:
            raise ValueError("input lookback precedes retained history")
        for j in range(out.shape[0]):
            out[j] = vals[idx, j]

    @dec
    def _deriv(x, t, u, G, out):
        f_ip(x, t, out)
        g_ip(x, G)
        for i in range(out.shape[0]):
            acc = 0.0
            for j in range(u.shape[0]):
                acc += G[i, j] * u[j]
            out[i] += acc

    @dec
    def rk4_held_step(x, t, u, dt, G, k1, k2, k3, k4, xs, out):
        _deriv(x, t, u, G, k1)
        for i in range(x.shape[0]):
            xs[i] = x[i] + 0.5 * dt * k1[i]
        _deriv(xs, t + 0.5 * dt, u, G, k2)
        for i in range(x.shape[0]):
            xs[i] = x[i] + 0.5 * dt * k2[i]
        _deriv(xs, t + 0.5 * dt, u, G, k3)
        for i in range(x.shape[0]):
            xs[i] = x[i] + dt * k3[i]
        _deriv(xs, t + dt, u, G, k4)
        for i in range(x.shape[0]):
            out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    @dec
    def rk4_delayed(x0, t0, n_steps, dt, delay, times, vals, pre_u, start_t, traj):
        """Integrate the delayed closed signal over ``n_steps`` fixed steps.

        ``traj`` must have shape ``(n_steps + 1, n)``; returns the index of
        the first step producing a non-finite state, or -1.
        """
        u = np.empty(m)
        G = np.empty((n, m))
        k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
        xs = np.empty(n)
        for i in range(n):
            traj[0, i] = x0[i]
        for k in range(n_steps):
            t = t0 + k * dt
            zoh_into(times, vals, t - delay, pre_u, start_t, u)
            rk4_held_step(traj[k], t, u, dt, G, k1, k2, k3, k4, xs, traj[k + 1])
            for i in range(n):
                if not np.isfinite(traj[k + 1, i]):
                    return k
        return -1

    @dec
    def predict_batch(x0, t, beta, cands, n_quad, times, vals, pre_u, start_t, out):
        """Window reconstruction for a batch of candidate delays.

        Integrates the model over the normalized window variable in
        ``[0, 1]`` from the state at ``t - beta``, feeding each candidate
        its own shifted input slice; ``out[c]`` receives the endpoint.
        """
        u = np.empty(m)
        G = np.empty((n, m))
        k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
        xs = np.empty(n)
        xp = np.empty(n)
        dd = 1.0 / n_quad
        h = beta * dd
        for c in range(cands.shape[0]):
            D = cands[c]
            for i in range(n):
                xp[i] = x0[i]
            for k in range(n_quad):
                delta = k * dd
                zoh_into(times, vals, t - D + beta * (delta - 1.0), pre_u, start_t, u)
                tp = t - beta + beta * delta
                rk4_held_step(xp, tp, u, h, G, k1, k2, k3, k4, xs, xs)
                for i in range(n):
                    xp[i] = xs[i]
            for i in range(n):
                out[c, i] = xp[i]
        return out

    @dec
    def predict_path(x0, t, beta, delay, n_quad, times, vals, pre_u, start_t, path):
        """Like ``predict_batch`` for one delay, storing every node.

        ``path`` must have shape ``(n_quad + 1, n)``; node ``k`` holds the
        reconstruction at window coordinate ``k / n_quad``.
        """
        u = np.empty(m)
        G = np.empty((n, m))
        k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
        xs = np.empty(n)
        dd = 1.0 / n_quad
        h = beta * dd
        for i in range(n):
            path[0, i] = x0[i]
        for k in range(n_quad):
            delta = k * dd
            zoh_into(times, vals, t - delay + beta * (delta - 1.0), pre_u, start_t, u)
            tp = t - beta + beta * delta
            rk4_held_step(path[k], tp, u, h, G, k1, k2, k3, k4, xs, path[k + 1])
        return path

    @dec
    def forward_committed(x_t, t, d_hat, n_sub, times, vals, pre_u, start_t, out):
        """Advance the model from ``t`` to ``t + d_hat`` on committed inputs.

        The inputs consumed on that interval were issued before ``t``
        (they lag by ``d_hat``), so the whole prediction reads history.
        """
        for i in range(n):
            out[i] = x_t[i]
        if n_sub <= 0 or d_hat <= 0.0:
            return out
        u = np.empty(m)
        G = np.empty((n, m))
        k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
        xs = np.empty(n)
        h = d_hat / n_sub
        for k in range(n_sub):
            tau = t + k * h
            zoh_into(times, vals, tau - d_hat, pre_u, start_t, u)
            rk4_held_step(out, tau, u, h, G, k1, k2, k3, k4, xs, xs)
            for i in range(n):
                out[i] = xs[i]
        return out

    return KernelSet(
        zoh_into=zoh_into,
        rk4_held_step=rk4_held_step,
        rk4_delayed=rk4_delayed,
        predict_batch=predict_batch,
        predict_path=predict_path,
        forward_committed=forward_committed,
        jitted=jitted,
    )


def build_closed_loop_kernel(kernels: KernelSet, nominal_ip: Callable, n: int, m: int):
    """Kernel producing the estimated-delay reference trajectory grid.

    Integrates the model both backward and forward from the current
    state, feeding committed inputs while they exist and closing the
    loop with the (box-clamped) nominal policy beyond them.  Returns a
    callable filling ``out[i]`` with the state at
    ``t_lo + i * (t_hi - t_lo) / (n_nodes - 1)``.
    """
    jitted = kernels.jitted and is_jitted(nominal_ip)
    dec = njit(cache=False) if jitted else (lambda fn: fn)
    zoh_into = kernels.zoh_into
    rk4_held_step = kernels.rk4_held_step

    @dec
    def y_grid(x_t, t, d_hat, t_lo, t_hi, n_nodes, times, vals, pre_u, start_t,
               u_lo, u_hi, out):
        u = np.empty(m)
        G = np.empty((n, m))
        k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
        xs = np.empty(n)
        y = np.empty(n)
        # nothing committed yet -> close the loop with the nominal policy
        newest = times[times.shape[0] - 1] if times.shape[0] > 0 else -1.0e300
        if n_nodes == 1:
            for i in range(n):
                out[0, i] = x_t[i]
            return out
        step = (t_hi - t_lo) / (n_nodes - 1)
        # first node index at or after t
        split = int(np.ceil((t - t_lo) / step - 1e-12)) if t > t_lo else 0
        if split > n_nodes:
            split = n_nodes
        # forward sweep: t -> t_hi
        for i in range(n):
            y[i] = x_t[i]
        tau = t
        for idx in range(split, n_nodes):
            target = t_lo + idx * step
            while tau < target - 1e-12:
                h = target - tau
                if h > step:
                    h = step
                if tau - d_hat <= newest:
                    zoh_into(times, vals, tau - d_hat, pre_u, start_t, u)
                else:
                    nominal_ip(y, u)
                    for j in range(m):
                        if u[j] < u_lo[j]:
                            u[j] = u_lo[j]
                        elif u[j] > u_hi[j]:
                            u[j] = u_hi[j]
                rk4_held_step(y, tau, u, h, G, k1, k2, k3, k4, xs, xs)
                for i in range(n):
                    y[i] = xs[i]
                tau += h
            for i in range(n):
                out[idx, i] = y[i]
        # backward sweep: t -> t_lo (inputs on this stretch are all history)
        for i in range(n):
            y[i] = x_t[i]
        tau = t
        for idx in range(split - 1, -1, -1):
            target = t_lo + idx * step
            while tau > target + 1e-12:
                h = target - tau
                if h < -step:
                    h = -step
                zoh_into(times, vals, tau - d_hat, pre_u, start_t, u)
                rk4_held_step(y, tau, u, h, G, k1, k2, k3, k4, xs, xs)
                for i in range(n):
                    y[i] = xs[i]
                tau += h
            for i in range(n):
                out[idx, i] = y[i]
        return out

    return y_grid
