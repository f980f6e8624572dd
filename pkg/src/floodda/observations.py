"""Synthetic twin-experiment observations and the observation-error model.

Produces the three observation kinds: gauge water levels at the stations,
wet-surface ratios over the floodplain subdomains at satellite overpass
instants, and post-event high-water marks.  Observation errors grow
linearly with age inside an assimilation window, so recent observations
weigh more in the analysis.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .rng import SYNTH, substream
from .solver import RiverModel, Trajectory, wsr


class ObsKind(enum.Enum):
    WL = "WL"
    WSR = "WSR"


@dataclass(frozen=True)
class ObsEntry:
    """One scalar observation: kind, station name or subdomain id, time, value, std."""

    kind: ObsKind
    ident: str | int
    time: float
    value: float
    sigma: float


def _entry_key(e: ObsEntry):
    return (e.time, e.kind.value, str(e.ident))


@dataclass
class ObsVector:
    """Sorted collection of observations assimilated in one analysis."""

    entries: list[ObsEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entries = sorted(self.entries, key=_entry_key)
        for e in self.entries:
            if e.sigma <= 0:
                raise ValueError("observation sigma must be positive")
            if e.kind is ObsKind.WSR and not 0.0 <= e.value <= 1.0:
                raise ValueError("WSR observations must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([e.sigma for e in self.entries])

    @property
    def kinds(self) -> list[ObsKind]:
        return [e.kind for e in self.entries]

    @property
    def wsr_mask(self) -> np.ndarray:
        return np.array([e.kind is ObsKind.WSR for e in self.entries], dtype=bool)

    def wsr_times(self) -> list[float]:
        return sorted({e.time for e in self.entries if e.kind is ObsKind.WSR})

    def with_values(self, values, clip_wsr: bool = True) -> "ObsVector":
        """Copy with replaced values; WSR components clipped to [0, 1]."""
        values = np.asarray(values, dtype=np.float64)
        out = []
        for e, v in zip(self.entries, values):
            v = float(v)
            if clip_wsr and e.kind is ObsKind.WSR:
                v = min(max(v, 0.0), 1.0)
            out.append(ObsEntry(e.kind, e.ident, e.time, v, e.sigma))
        return ObsVector(out)

    def subset(self, predicate) -> "ObsVector":
        return ObsVector([e for e in self.entries if predicate(e)])

    def count(self, kind: ObsKind) -> int:
        return sum(1 for e in self.entries if e.kind is kind)


@dataclass
class GaugeSeries:
    """In-situ water-level series for one station at a fixed native interval."""

    station: str
    times: np.ndarray
    values: np.ndarray
    interval: float = 900.0

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("gauge times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("gauge values must be finite")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time_s", "wl_m"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, station: str, interval: float = 900.0) -> "GaugeSeries":
        times, values = [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            if next(r) != ["time_s", "wl_m"]:
                raise ValueError("unexpected gauge CSV header")
            for row in r:
                times.append(float(row[0]))
                values.append(float(row[1]))
        return cls(station=station, times=np.array(times), values=np.array(values),
                   interval=interval)


@dataclass
class OverpassSet:
    """Wet-surface-ratio observations at satellite overpass instants."""

    times: np.ndarray                 # (T,)
    values: np.ndarray                # (T, K) in [0, 1]
    sigma: float

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size:
            raise ValueError("overpass values must be (n_times, n_subdomains)")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("WSR must lie in [0, 1]")

    @property
    def n_subdomains(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time_s", "subdomain", "wsr", "sigma"])
            for i, t in enumerate(self.times):
                for k in range(self.n_subdomains):
                    w.writerow([repr(float(t)), k + 1,
                                repr(float(self.values[i, k])), repr(float(self.sigma))])

    @classmethod
    def from_csv(cls, path) -> "OverpassSet":
        rows = []
        with open(path, newline="") as f:
            r = csv.reader(f)
            if next(r) != ["time_s", "subdomain", "wsr", "sigma"]:
                raise ValueError("unexpected overpass CSV header")
            for row in r:
                rows.append((float(row[0]), int(row[1]), float(row[2]), float(row[3])))
        if not rows:
            return cls(times=np.empty(0), values=np.empty((0, 0)), sigma=0.05)
        times = sorted({t for t, *_ in rows})
        n_sub = max(k for _, k, _, _ in rows)
        values = np.zeros((len(times), n_sub))
        sigma = rows[0][3]
        index = {t: i for i, t in enumerate(times)}
        for t, k, v, s in rows:
            values[index[t], k - 1] = v
        return cls(times=np.array(times), values=values, sigma=sigma)


@dataclass(frozen=True)
class HwmPoint:
    point_id: str
    kind: str            # "station" | "subdomain"
    location: str | int
    wl_max: float


@dataclass
class HwmSet:
    """Post-event high-water-mark observations."""

    points: list[HwmPoint]

    def __len__(self) -> int:
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["point_id", "kind", "location", "wl_max_m"])
            for p in self.points:
                w.writerow([p.point_id, p.kind, p.location, repr(float(p.wl_max))])

    @classmethod
    def from_csv(cls, path) -> "HwmSet":
        points = []
        with open(path, newline="") as f:
            r = csv.reader(f)
            if next(r) != ["point_id", "kind", "location", "wl_max_m"]:
                raise ValueError("unexpected HWM CSV header")
            for row in r:
                loc: str | int = int(row[2]) if row[1] == "subdomain" else row[2]
                points.append(HwmPoint(row[0], row[1], loc, float(row[3])))
        return cls(points)


@dataclass(frozen=True)
class ObsErrorModel:
    """Base stds plus the linear growth of sigma with observation age."""

    sigma_wl: float = 0.05
    sigma_wsr: float = 0.05
    alpha: float = 1.0
    sigma_hwm: float = 0.1

    def __post_init__(self) -> None:
        if min(self.sigma_wl, self.sigma_wsr, self.sigma_hwm) <= 0 or self.alpha < 0:
            raise ValueError("error-model parameters must be positive (alpha >= 0)")


def sigma_at(base: float, t: float, t0: float, window: float, model: ObsErrorModel) -> float:
    """Error std for an observation of age t0 - t inside [t0 - window, t0]."""
    if not t0 - window - 1e-9 <= t <= t0 + 1e-9:
        raise ValueError(f"time {t} outside window [{t0 - window}, {t0}]")
    return base * (1.0 + model.alpha * (t0 - t) / window)


@dataclass
class ObsBank:
    """All synthetic observations of an event, served per cycle window."""

    gauges: list[GaugeSeries]
    overpasses: OverpassSet
    hwms: HwmSet


def synthesize_truth_obs(
    truth: Trajectory,
    model: RiverModel,
    overpass_times,
    error_model: ObsErrorModel,
    seed: int,
    gauge_interval: float = 900.0,
    hwm_count: int = 178,
) -> ObsBank:
    """Build the full observation bank from a truth run.

    Gauge series are the truth station levels on the native grid plus
    Gaussian noise; WSR values are the truth extents at each overpass plus
    clipped noise; HWM points carry noisy per-point maxima of the truth
    water-level field at stations and subdomains.
    """
    t0, t1 = truth.start_time, truth.end_time
    for t in overpass_times:
        if not t0 <= t <= t1:
            raise ValueError(f"overpass at {t} outside truth span [{t0}, {t1}]")

    stations = sorted(model.geometry.station_cells)
    keep = np.abs((truth.times / gauge_interval) - np.round(truth.times / gauge_interval)) < 1e-9
    idx = np.flatnonzero(keep)
    gauges = []
    for s_i, station in enumerate(stations):
        series = truth.wl_series(station)[idx]
        rng = substream(seed, SYNTH, 0, s_i)
        noisy = series + error_model.sigma_wl * rng.standard_normal(series.size)
        gauges.append(GaugeSeries(station=station, times=truth.times[idx],
                                  values=noisy, interval=gauge_interval))

    op_times = np.array(sorted(overpass_times), dtype=np.float64)
    values = np.zeros((op_times.size, model.n_subdomains))
    rng = substream(seed, SYNTH, 1)
    for i, t in enumerate(op_times):
        state = truth.state_at(float(t))
        for k, sub in enumerate(model.subdomains):
            raw = wsr(state, sub) + error_model.sigma_wsr * rng.standard_normal()
            values[i, k] = min(max(raw, 0.0), 1.0)
    overpasses = OverpassSet(times=op_times, values=values, sigma=error_model.sigma_wsr)

    rng = substream(seed, SYNTH, 2)
    points: list[HwmPoint] = []
    maxima = {("station", s): float(np.max(truth.wl_series(s))) for s in stations}
    for k in range(model.n_subdomains):
        maxima[("subdomain", k + 1)] = float(np.max(truth.stage_series(k)))
    locations = [("station", s) for s in stations] + [
        ("subdomain", k + 1) for k in range(model.n_subdomains)
    ]
    for i in range(hwm_count):
        kind, loc = locations[i % len(locations)]
        noisy = maxima[(kind, loc)] + error_model.sigma_hwm * rng.standard_normal()
        points.append(HwmPoint(point_id=f"p{i:03d}", kind=kind, location=loc, wl_max=noisy))
    return ObsBank(gauges=gauges, overpasses=overpasses, hwms=HwmSet(points))


def window_slice(
    bank: ObsBank,
    window: tuple[float, float],
    error_model: ObsErrorModel,
    t0: float,
    wl_interval: float = 3600.0,
) -> ObsVector:
    """Observations assimilated over (t_a, t_b]: hourly-subsampled gauge WL
    plus every overpass in range, with age-dependent sigmas."""
    t_a, t_b = window
    if abs(t_b - t0) > 1e-6:
        raise ValueError("window must end at the present time t0")
    length = t_b - t_a
    entries: list[ObsEntry] = []
    if length <= 0:
        return ObsVector(entries)
    for gauge in bank.gauges:
        on_grid = np.abs((gauge.times / wl_interval) - np.round(gauge.times / wl_interval)) < 1e-9
        inside = (gauge.times > t_a + 1e-9) & (gauge.times <= t_b + 1e-9)
        for i in np.flatnonzero(on_grid & inside):
            t = float(gauge.times[i])
            entries.append(ObsEntry(
                kind=ObsKind.WL, ident=gauge.station, time=t,
                value=float(gauge.values[i]),
                sigma=sigma_at(error_model.sigma_wl, t, t0, length, error_model),
            ))
    for i, t in enumerate(bank.overpasses.times):
        if t_a + 1e-9 < t <= t_b + 1e-9:
            for k in range(bank.overpasses.n_subdomains):
                entries.append(ObsEntry(
                    kind=ObsKind.WSR, ident=k + 1, time=float(t),
                    value=float(bank.overpasses.values[i, k]),
                    sigma=sigma_at(bank.overpasses.sigma, float(t), t0, length, error_model),
                ))
    return ObsVector(entries)
