"""Inflow hydrographs, the biased large-scale forcing, and forcing strategies.

Three strategies pick the reanalysis/forecast forcing pair: CC uses the
biased source for both phases, VC the observed source for reanalysis and
the biased one for forecast, VQ the observed source for reanalysis and a
discharge held constant at its issue-time value for the forecast.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np


class ForcingSpanError(ValueError):
    """Hydrograph evaluated outside its defined time span."""


class ForcingStrategy(enum.Enum):
    CC = "CC"
    VC = "VC"
    VQ = "VQ"


@dataclass(frozen=True)
class Hydrograph:
    """Discharge time series with piecewise-linear interpolation."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ValueError("hydrograph needs matching 1-D times/values, at least 2 samples")
        if np.any(np.diff(times) <= 0):
            raise ValueError("hydrograph times must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("discharge must be finite and non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def covers(self, t_a: float, t_b: float) -> bool:
        return self.times[0] <= t_a and t_b <= self.times[-1]

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < self.times[0] - 1e-9) or np.any(t_arr > self.times[-1] + 1e-9):
            raise ForcingSpanError(
                f"time outside hydrograph span [{self.times[0]}, {self.times[-1]}]"
            )
        out = np.interp(t_arr, self.times, self.values)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def peak(self) -> tuple[float, float]:
        """(time, value) of the maximum discharge."""
        i = int(np.argmax(self.values))
        return float(self.times[i]), float(self.values[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time_s", "q_m3s"])
            for t, q in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(q))])

    @classmethod
    def from_csv(cls, path) -> "Hydrograph":
        times, values = [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["time_s", "q_m3s"]:
                raise ValueError("unexpected hydrograph CSV header")
            for row in r:
                times.append(float(row[0]))
                values.append(float(row[1]))
        return cls(np.array(times), np.array(values))


def scale(h: Hydrograph, mu: float) -> Hydrograph:
    """Pointwise multiplication of the discharge by mu > 0."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return Hydrograph(h.times.copy(), h.values * mu)


def synth_event_hydrograph(
    peak: float,
    base: float,
    t_peak: float,
    rise_duration: float = 172800.0,
    duration: float = 604800.0,
    t0: float = 0.0,
    dt: float = 900.0,
    shape: float = 4.0,
) -> Hydrograph:
    """Single-peak flood wave: gamma-shaped rise and recession over a base flow.

    The sample grid contains t_peak exactly, so the maximum equals ``peak``
    at ``t_peak`` by construction.
    """
    if not peak >= base >= 0:
        raise ValueError("need peak >= base >= 0")
    if rise_duration <= 0 or duration <= 0 or dt <= 0 or shape <= 0:
        raise ValueError("invalid shape parameters")
    if abs((t_peak - t0) / dt - round((t_peak - t0) / dt)) > 1e-9:
        raise ValueError("t_peak must fall on the sample grid")
    n = int(round(duration / dt)) + 1
    times = t0 + dt * np.arange(n)
    x = (times - (t_peak - rise_duration)) / rise_duration
    g = np.where(x > 0, np.power(np.maximum(x, 0), shape) * np.exp(shape * (1.0 - np.maximum(x, 1e-300))), 0.0)
    return Hydrograph(times, base + (peak - base) * g)


@dataclass(frozen=True)
class BiasModel:
    """Systematic error of the large-scale forcing source.

    Values are produced as amplitude(t) * Q(t - shift), then smoothed with a
    centred moving average.  A negative shift moves the peak earlier.  The
    optional schedule (times, amplitudes) makes the amplitude time-varying.
    """

    amplitude: float = 0.70
    shift: float = -43200.0
    smoothing: float = 0.0
    amplitude_schedule: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        if self.amplitude <= 0:
            raise ValueError("bias amplitude must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing window must be non-negative")
        if self.amplitude_schedule is not None:
            times, amps = self.amplitude_schedule
            if len(times) != len(amps) or len(times) < 2:
                raise ValueError("amplitude schedule needs matching times/amplitudes")
            if any(a <= 0 for a in amps):
                raise ValueError("scheduled amplitudes must be positive")

    def amplitude_at(self, t) -> np.ndarray:
        if self.amplitude_schedule is None:
            return np.full_like(np.asarray(t, dtype=np.float64), self.amplitude)
        times, amps = self.amplitude_schedule
        return np.interp(np.asarray(t, dtype=np.float64), np.asarray(times), np.asarray(amps))


def apply_bias(observed: Hydrograph, bias: BiasModel) -> Hydrograph:
    """Degrade an observed hydrograph into its large-scale-model counterpart."""
    times = observed.times
    src = np.clip(times - bias.shift, times[0], times[-1])
    values = bias.amplitude_at(times) * np.interp(src, times, observed.values)
    if bias.smoothing > 0:
        dt = float(np.min(np.diff(times)))
        half = int(math.floor(bias.smoothing / (2.0 * dt)))
        if half > 0:
            w = 2 * half + 1
            padded = np.concatenate((np.full(half, values[0]), values, np.full(half, values[-1])))
            kernel = np.full(w, 1.0 / w)
            values = np.convolve(padded, kernel, mode="valid")
    return Hydrograph(times.copy(), values)


def select_forcing(
    strategy: ForcingStrategy,
    phase: str,
    observed: Hydrograph,
    biased: Hydrograph,
    t0: float,
    horizon: float = 8_640_000.0,
) -> Hydrograph:
    """Pick the hydrograph for a phase ('reanalysis' or 'forecast').

    VQ holds the observed discharge at its t0 value for every forecast time.
    """
    if phase not in ("reanalysis", "forecast"):
        raise ValueError("phase must be 'reanalysis' or 'forecast'")
    if strategy is ForcingStrategy.CC:
        return biased
    if not observed.covers(observed.span[0], t0):
        raise ForcingSpanError("observed hydrograph does not reach t0")
    if phase == "reanalysis":
        return observed
    if strategy is ForcingStrategy.VC:
        return biased
    q0 = observed(t0)
    return Hydrograph(np.array([t0, t0 + horizon]), np.array([q0, q0]))
