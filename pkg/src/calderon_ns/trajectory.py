"""Time-indexed sequences of spectral fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import Grid3, GridError, SpectralField


@dataclass(eq=False)
class KatoTrajectory:
    """Fields sampled at strictly increasing positive times.

    ``initial`` optionally carries the datum at t = 0, which is not part of
    the weighted sup norms but is needed for persistency checks and for
    interpolating back to the start of the interval.
    """

    grid: Grid3
    times: np.ndarray
    fields: list
    initial: Optional[SpectralField] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError("trajectory needs a non-empty 1-D time array")
        if len(self.fields) != self.times.size:
            raise ValueError("one field per time is required")
        if self.times[0] <= 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be positive and strictly increasing")
        for f in self.fields:
            if f.grid != self.grid:
                raise GridError("trajectory field on a different grid")

    def __len__(self):
        return self.times.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> SpectralField:
        """Linear interpolation in time; ``t = 0`` returns ``initial``."""
        times = self.times
        if t < 0 or t > times[-1] * (1 + 1e-12):
            raise ValueError(f"time {t} outside trajectory span (0, {times[-1]}]")
        if t < times[0]:
            if self.initial is None:
                if np.isclose(t, times[0], rtol=1e-12):
                    return self.fields[0]
                raise ValueError("time before first sample and no initial datum")
            a, b, ta, tb = self.initial, self.fields[0], 0.0, times[0]
        else:
            i = int(np.searchsorted(times, t, side="right")) - 1
            i = min(i, times.size - 1)
            if i == times.size - 1 or t == times[i]:
                return self.fields[i]
            a, b, ta, tb = self.fields[i], self.fields[i + 1], times[i], times[i + 1]
        lam = (t - ta) / (tb - ta)
        return a.replace((1 - lam) * a.coeffs + lam * b.coeffs,
                         a.divergence_free and b.divergence_free)

    def map(self, func) -> "KatoTrajectory":
        init = None if self.initial is None else func(self.initial)
        return KatoTrajectory(self.grid, self.times.copy(), [func(f) for f in self.fields],
                              init, dict(self.meta))


def log_time_grid(t_min: float, t_max: float, per_decade: int = 64) -> np.ndarray:
    """Logarithmic grid from ``t_min`` to ``t_max`` inclusive."""
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    decades = np.log10(t_max / t_min)
    count = max(int(np.ceil(decades * per_decade)), 1) + 1
    return np.geomspace(t_min, t_max, count)
