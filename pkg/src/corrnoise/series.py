"""Uniformly sampled time series: the data carrier shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TimeSeries"]

# Relative tolerance for declaring a loaded time grid uniform.
_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class TimeSeries:
    """Observations on a uniform time grid t0, t0+dt, t0+2*dt, ...

    Discrete-lag error processes are only defined on a fixed grid, so
    uniform spacing is part of the type: non-uniform data is rejected at
    construction / load time rather than resampled.
    """

    t0: float
    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError(f"values must be 1-D, got shape {values.shape}")
        if values.size < 1:
            raise ValueError("a time series needs at least one observation")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"dt must be a positive real, got {self.dt}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        """Same grid, new values."""
        return TimeSeries(self.t0, self.dt, np.asarray(values, dtype=float))

    def same_grid(self, other: "TimeSeries", rtol: float = _GRID_RTOL) -> bool:
        if len(self) != len(other):
            return False
        scale = max(abs(self.dt), abs(other.dt))
        return (
            abs(self.t0 - other.t0) <= rtol * max(1.0, abs(self.t0), abs(other.t0))
            and abs(self.dt - other.dt) <= rtol * scale
        )

    def to_csv(self, path) -> None:
        """Write two-column CSV ``time,value`` at full double precision.

        Values are rendered with Python's shortest round-trip repr, so a
        written file reloads bit-identically.
        """
        times = self.times
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("time,value\n")
            for t, v in zip(times, self.values):
                fh.write(f"{float(t)!r},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        """Load a ``time,value`` CSV, rejecting non-uniform grids."""
        times = []
        values = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header.replace(" ", "") != "time,value":
                raise ValueError(f"expected header 'time,value', got {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                t_str, v_str = line.split(",")
                times.append(float(t_str))
                values.append(float(v_str))
        times = np.asarray(times)
        values = np.asarray(values)
        if times.size < 1:
            raise ValueError("empty time series file")
        if times.size == 1:
            return cls(float(times[0]), 1.0, values)
        steps = np.diff(times)
        dt = float(np.mean(steps))
        if dt <= 0 or np.any(np.abs(steps - dt) > _GRID_RTOL * max(1.0, abs(dt)) * 10):
            raise ValueError(
                "non-uniform time grid: discrete-lag noise models are undefined "
                "off-grid, so resampling is refused"
            )
        return cls(float(times[0]), dt, values)
