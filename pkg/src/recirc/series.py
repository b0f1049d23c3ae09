"""Piecewise-linear time series for forcing data (radiation temperature, light)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) == 0:
            raise ValueError("time series needs matching 1-D times and values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time series times must be strictly increasing")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def covers(self, start: float, stop: float) -> bool:
        if len(self.times) == 1:
            return True
        return self.times[0] <= start + 1e-9 and self.times[-1] >= stop - 1e-9

    @classmethod
    def constant(cls, value: float) -> "TimeSeries":
        return cls((0.0,), (float(value),))

    @classmethod
    def day_bump(cls, base: float, amplitude: float, start: float, stop: float, period: float = 43200.0,
                 samples: int = 49) -> "TimeSeries":
        """``base + amplitude sin(pi t / period)`` clipped at zero phase outside ``[0, period]``."""
        t = np.linspace(start, stop, samples)
        phase = np.clip(t / period, 0.0, 1.0)
        return cls(tuple(t), tuple(base + amplitude * np.sin(np.pi * phase)))

    def to_dict(self) -> dict:
        return {"times": list(self.times), "values": list(self.values)}
