"""Timestamped control-input history with zero-order-hold point queries.

Every delayed-input evaluation in the package — plant integration,
state prediction over a lookback window, delay-candidate scans — reads
the applied input signal through one of these buffers.  The signal is
reconstructed as piecewise constant: ``sample(tau)`` returns the value
of the latest stored sample at or before ``tau``.  Queries before the
run start return a configurable pre-run input (zero by default), which
is how the loop models the actuator state on the interval covered by
the unknown delay before the first command lands.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError, LookbackError, NonMonotoneTimeError

_INITIAL_CAPACITY = 256


class TimedInputBuffer:
    """Ring-buffer-style store of ``(time, input)`` samples.

    Parameters
    ----------
    horizon : float
        Maximum lookback (seconds) that must remain answerable from the
        newest sample.  Older samples may be evicted.
    dt : float
        Nominal sample spacing; informational, used for capacity hints.
    m : int
        Input dimension.
    pre_run_input : array_like, optional
        Input reported for queries before ``start_time``.  Defaults to
        the zero vector.
    start_time : float
        Time of the first control step; queries before it hit the
        pre-run input instead of raising.
    min_lookback : float, optional
        If given, ``horizon`` must be at least this deep.  The closed
        loop passes the deepest lookback any predictor performs.
    """

    def __init__(
        self,
        horizon: float,
        dt: float,
        m: int,
        pre_run_input=None,
        start_time: float = 0.0,
        min_lookback: float | None = None,
    ):
        if horizon <= 0.0:
            raise ContractViolationError("horizon must be positive")
        if min_lookback is not None and horizon < min_lookback:
            raise ContractViolationError(
                f"horizon {horizon} shallower than required lookback {min_lookback}"
            )
        self.horizon = float(horizon)
        self.dt = float(dt)
        self.m = int(m)
        self.start_time = float(start_time)
        if pre_run_input is None:
            self.pre_run_input = np.zeros(self.m)
        else:
            self.pre_run_input = np.asarray(pre_run_input, dtype=float).reshape(self.m)
        cap = max(_INITIAL_CAPACITY, int(2 * horizon / dt) + 2 if dt > 0 else _INITIAL_CAPACITY)
        self._times = np.empty(cap)
        self._values = np.empty((cap, self.m))
        self._lo = 0  # first live sample
        self._hi = 0  # one past last live sample

    def __len__(self) -> int:
        return self._hi - self._lo

    @property
    def newest_time(self) -> float:
        if self._hi == self._lo:
            raise LookbackError("buffer is empty")
        return float(self._times[self._hi - 1])

    @property
    def oldest_time(self) -> float:
        if self._hi == self._lo:
            raise LookbackError("buffer is empty")
        return float(self._times[self._lo])

    def push(self, t: float, u) -> None:
        """Append a sample; ``t`` must be strictly after the last one."""
        u = np.asarray(u, dtype=float).reshape(self.m)
        if self._hi > self._lo and t <= self._times[self._hi - 1]:
            raise NonMonotoneTimeError(
                f"push at t={t} not after last sample t={self._times[self._hi - 1]}"
            )
        if self._hi == self._times.shape[0]:
            self._compact_or_grow()
        self._times[self._hi] = t
        self._values[self._hi] = u
        self._hi += 1
        self._evict(t)

    def sample(self, tau: float) -> np.ndarray:
        """Zero-order-hold value of the input at time ``tau``.

        Raises
        ------
        LookbackError
            If ``tau`` precedes the retained history (but not the run
            start) or lies beyond the newest sample.
        """
        if tau < self.start_time:
            return self.pre_run_input.copy()
        if self._hi == self._lo:
            raise LookbackError(f"no samples retained; cannot answer tau={tau}")
        if tau > self._times[self._hi - 1]:
            raise LookbackError(
                f"tau={tau} beyond newest sample t={self._times[self._hi - 1]}"
            )
        idx = int(np.searchsorted(self._times[self._lo : self._hi], tau, side="right")) - 1
        if idx < 0:
            raise LookbackError(
                f"tau={tau} precedes retained history "
                f"[{self._times[self._lo]}, {self._times[self._hi - 1]}]"
            )
        return self._values[self._lo + idx].copy()

    def views(self):
        """Raw ``(times, values)`` views of the live window for kernels."""
        return self._times[self._lo : self._hi], self._values[self._lo : self._hi]

    def _evict(self, t_now: float) -> None:
        # Keep one anchor sample at or before t_now - horizon so the full
        # horizon stays answerable.
        cutoff = t_now - self.horizon
        lo = self._lo
        while lo + 1 < self._hi and self._times[lo + 1] <= cutoff:
            lo += 1
        self._lo = lo

    def _compact_or_grow(self) -> None:
        n = self._hi - self._lo
        if self._lo > self._times.shape[0] // 2:
            self._times[:n] = self._times[self._lo : self._hi]
            self._values[:n] = self._values[self._lo : self._hi]
        else:
            cap = 2 * self._times.shape[0]
            times = np.empty(cap)
            values = np.empty((cap, self.m))
            times[:n] = self._times[self._lo : self._hi]
            values[:n] = self._values[self._lo : self._hi]
            self._times, self._values = times, values
        self._lo, self._hi = 0, n
