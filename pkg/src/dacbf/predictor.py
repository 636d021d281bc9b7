"""Lookback-window state reconstruction and its delay sensitivity.

The reconstruction integrates the model over a normalized window
variable from the state one window-length back, feeding it the input
history shifted by a candidate delay.  With the true delay the endpoint
reproduces the current state, so the squared endpoint mismatch is a
cost whose (normalized, sign-flipped) delay-gradient drives the online
delay estimator and whose raw value feeds the delay-consistency scans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffer import TimedInputBuffer
from .dynamics import SystemModel, _require_coverage
from .errors import ContractViolationError


@dataclass(frozen=True)
class PredictorConfig:
    """Window length, quadrature resolution and finite-difference width."""

    beta: float = 0.5
    n_quad: int = 64
    fd_eps: float = 1e-4

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ContractViolationError("beta must be positive")
        if self.n_quad < 16:
            raise ContractViolationError("n_quad must be at least 16")
        if self.fd_eps <= 0.0:
            raise ContractViolationError("fd_eps must be positive")


@dataclass(frozen=True)
class PredictionResult:
    x_pred: np.ndarray   # window-endpoint reconstruction
    cost: float          # 0.5 * ||x_pred - x(t)||^2
    grad: float          # d(cost)/d(candidate delay)
    rho: float           # normalized descent direction


def _predict_many(model: SystemModel, buffer: TimedInputBuffer, x_tmb: np.ndarray,
                  t: float, cands: np.ndarray, cfg: PredictorConfig) -> np.ndarray:
    deepest = t - float(np.max(cands)) - cfg.beta
    _require_coverage(buffer, deepest)
    times, vals = buffer.views()
    out = np.empty((cands.shape[0], model.n))
    model.kernels().predict_batch(
        np.asarray(x_tmb, dtype=float), t, cfg.beta, np.asarray(cands, dtype=float),
        cfg.n_quad, times, vals, buffer.pre_run_input, buffer.start_time, out,
    )
    return out


def predict_state(model: SystemModel, buffer: TimedInputBuffer, x_at_t_minus_beta,
                  t: float, d_candidate: float, cfg: PredictorConfig) -> np.ndarray:
    """Window-endpoint state reconstruction for one candidate delay."""
    if d_candidate < 0.0:
        raise ContractViolationError("candidate delay must be non-negative")
    return _predict_many(model, buffer, x_at_t_minus_beta, t,
                         np.array([d_candidate]), cfg)[0]


def cost(model: SystemModel, buffer: TimedInputBuffer, x_t, x_t_minus_beta,
         t: float, d_candidate: float, cfg: PredictorConfig) -> float:
    """Half squared mismatch between the reconstruction and the state."""
    xp = predict_state(model, buffer, x_t_minus_beta, t, d_candidate, cfg)
    r = xp - np.asarray(x_t, dtype=float)
    return 0.5 * float(r @ r)


def evaluate(model: SystemModel, buffer: TimedInputBuffer, x_t, x_t_minus_beta,
             t: float, d_hat: float, cfg: PredictorConfig) -> PredictionResult:
    """Reconstruction, cost, delay-gradient and descent direction at once.

    The delay sensitivity of the reconstruction endpoint is taken by
    central finite differences of width ``cfg.fd_eps`` (one-sided at the
    non-negativity boundary), and the gradient is the inner product of
    the endpoint mismatch with that sensitivity.  The descent direction
    divides the negated gradient by one plus the squared sensitivity
    norm, which keeps it bounded regardless of how steep the cost is.
    """
    if d_hat < 0.0:
        raise ContractViolationError("candidate delay must be non-negative")
    eps = cfg.fd_eps
    x_t = np.asarray(x_t, dtype=float)
    if d_hat >= eps:
        xs = _predict_many(model, buffer, x_t_minus_beta, t,
                           np.array([d_hat, d_hat - eps, d_hat + eps]), cfg)
        dxp = (xs[2] - xs[1]) / (2.0 * eps)
    else:
        # non-negativity boundary: forward secant (sign-robust on the
        # staircase landscape produced by zero-order-held inputs)
        xs = _predict_many(model, buffer, x_t_minus_beta, t,
                           np.array([d_hat, d_hat + eps]), cfg)
        dxp = (xs[1] - xs[0]) / eps
    resid = xs[0] - x_t
    grad = float(resid @ dxp)
    rho_val = -grad / (1.0 + float(dxp @ dxp))
    return PredictionResult(x_pred=xs[0], cost=0.5 * float(resid @ resid),
                            grad=grad, rho=rho_val)


def rho(model: SystemModel, buffer: TimedInputBuffer, x_t, x_t_minus_beta,
        t: float, d_hat: float, cfg: PredictorConfig) -> float:
    """Normalized descent direction of the window cost in the delay."""
    return evaluate(model, buffer, x_t, x_t_minus_beta, t, d_hat, cfg).rho
