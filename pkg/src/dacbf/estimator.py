"""Projected-gradient integration of the online delay estimate."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ContractViolationError


@dataclass(frozen=True)
class DelayEstimate:
    """Current delay estimate with its adaptation rate and projection interval."""

    d_hat: float
    gamma: float
    proj_lo: float
    proj_hi: float

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ContractViolationError("gamma must be positive")
        if not (self.proj_lo <= self.d_hat <= self.proj_hi):
            raise ContractViolationError(
                f"d_hat={self.d_hat} outside projection interval "
                f"[{self.proj_lo}, {self.proj_hi}]"
            )


def proj(f: float, a: float, b: float, g: float) -> float:
    """Interval projection of a drive signal.

    Returns 0 when the value sits on the boundary the drive points out
    of; the drive unchanged otherwise.
    """
    if not (a <= f <= b):
        raise ContractViolationError(f"value {f} outside [{a}, {b}]")
    if f == a and g < 0.0:
        return 0.0
    if f == b and g > 0.0:
        return 0.0
    return g


def update(est: DelayEstimate, rho: float, dt: float) -> DelayEstimate:
    """One explicit-Euler step of the projected adaptation law.

    The continuous projection cannot see discrete overshoot, so the
    stepped value is clamped back into the interval afterwards.
    """
    if dt <= 0.0:
        raise ContractViolationError("dt must be positive")
    d = est.d_hat + dt * est.gamma * proj(est.d_hat, est.proj_lo, est.proj_hi, rho)
    d = min(max(d, est.proj_lo), est.proj_hi)
    return replace(est, d_hat=d)


def set_interval(est: DelayEstimate, lo: float, hi: float) -> DelayEstimate:
    """Refresh the projection interval, re-clamping the estimate into it."""
    if lo > hi:
        raise ContractViolationError(f"empty projection interval [{lo}, {hi}]")
    return DelayEstimate(d_hat=min(max(est.d_hat, lo), hi), gamma=est.gamma,
                         proj_lo=lo, proj_hi=hi)
