"""Verification metrics: station RMSE and gain, contingency maps, the
critical success index, high-water-mark scoring, and lead-time skill."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cycling import ForecastResult, extract_leadtime_series
from .observations import GaugeSeries, HwmSet

log = logging.getLogger(__name__)

# contingency raster codes, also used in emitted .asc files
TN, TP, FP, FN = 0, 1, 2, 3
NODATA_CODE = -9999


def rmse(
    sim_times: np.ndarray,
    sim_values: np.ndarray,
    obs_times: np.ndarray,
    obs_values: np.ndarray,
    pair_tolerance: float = 450.0,
) -> float:
    """Root-mean-square error over nearest-sample pairs.

    Each observation is paired with the nearest simulated sample no farther
    than ``pair_tolerance`` (half the native interval by default); with no
    pair at all this is an error.
    """
    sim_times = np.asarray(sim_times, dtype=np.float64)
    sim_values = np.asarray(sim_values, dtype=np.float64)
    obs_times = np.asarray(obs_times, dtype=np.float64)
    obs_values = np.asarray(obs_values, dtype=np.float64)
    if sim_times.size == 0 or obs_times.size == 0:
        raise ValueError("empty series")
    idx = np.clip(np.searchsorted(sim_times, obs_times), 1, sim_times.size - 1)
    left = np.abs(sim_times[idx - 1] - obs_times) <= np.abs(sim_times[idx] - obs_times)
    nearest = np.where(left, idx - 1, idx)
    keep = np.abs(sim_times[nearest] - obs_times) <= pair_tolerance
    if not keep.any():
        raise ValueError("no overlapping samples within the pairing tolerance")
    diff = sim_values[nearest[keep]] - obs_values[keep]
    return float(np.sqrt(np.mean(diff**2)))


def gain(rmse_da: dict[str, float], rmse_ol: dict[str, float]) -> float:
    """Mean relative RMSE improvement over the stations, in percent."""
    if set(rmse_da) != set(rmse_ol):
        raise ValueError("station sets differ")
    ratios = []
    for station in sorted(rmse_da):
        if rmse_ol[station] <= 0:
            raise ValueError(f"open-loop RMSE must be positive at {station}")
        ratios.append(1.0 - rmse_da[station] / rmse_ol[station])
    return 100.0 * float(np.mean(ratios))


@dataclass
class ContingencyMap:
    """Per-pixel TP/TN/FP/FN labels of simulated vs observed flood extent."""

    labels: np.ndarray              # int array with NODATA_CODE outside data

    @property
    def counts(self) -> dict[str, int]:
        return {
            "TP": int(np.sum(self.labels == TP)),
            "TN": int(np.sum(self.labels == TN)),
            "FP": int(np.sum(self.labels == FP)),
            "FN": int(np.sum(self.labels == FN)),
        }

    @property
    def n_valid(self) -> int:
        return int(np.sum(self.labels != NODATA_CODE))

    @property
    def degenerate(self) -> bool:
        c = self.counts
        return c["TP"] + c["FP"] + c["FN"] == 0


def contingency(
    sim_wet: np.ndarray, obs_wet: np.ndarray, valid: np.ndarray | None = None
) -> ContingencyMap:
    """Label each pixel: TP sim&obs wet, TN both dry, FP sim only, FN obs only."""
    sim_wet = np.asarray(sim_wet, dtype=bool)
    obs_wet = np.asarray(obs_wet, dtype=bool)
    if sim_wet.shape != obs_wet.shape:
        raise ValueError("raster shapes differ")
    if valid is None:
        valid = np.ones(sim_wet.shape, dtype=bool)
    labels = np.full(sim_wet.shape, NODATA_CODE, dtype=np.int64)
    labels[valid & sim_wet & obs_wet] = TP
    labels[valid & ~sim_wet & ~obs_wet] = TN
    labels[valid & sim_wet & ~obs_wet] = FP
    labels[valid & ~sim_wet & obs_wet] = FN
    return ContingencyMap(labels=labels)


def csi(cmap: ContingencyMap) -> float:
    """Critical success index, percent: 100 * TP / (TP + FP + FN).

    With no wet pixel in either map the score is defined as 100 (flagged via
    ``cmap.degenerate`` and logged) so batch runs over dry dates complete.
    """
    c = cmap.counts
    denom = c["TP"] + c["FP"] + c["FN"]
    if denom == 0:
        log.warning("degenerate contingency map (no wet pixels anywhere): CSI := 100")
        return 100.0
    return 100.0 * c["TP"] / denom


def hwm_rmse(simulated_max: dict, hwms: HwmSet) -> float:
    """RMSE between per-point simulated maxima and high-water-mark values.

    ``simulated_max`` maps (kind, location) to the simulated event maximum.
    """
    diffs = []
    for p in hwms.points:
        key = (p.kind, p.location)
        if key not in simulated_max:
            raise KeyError(f"HWM point {p.point_id} at {key} has no simulated value")
        diffs.append(simulated_max[key] - p.wl_max)
    if not diffs:
        raise ValueError("empty HWM set")
    return float(np.sqrt(np.mean(np.asarray(diffs) ** 2)))


def leadtime_rmse(
    forecasts: list[ForecastResult],
    gauge: GaugeSeries,
    period: tuple[float, float],
    station: str,
    lead: float,
) -> float:
    """RMSE of the fixed-lead forecast series against a gauge over a period."""
    times, values = extract_leadtime_series(forecasts, lead, station)
    keep = (times >= period[0]) & (times <= period[1])
    if not keep.any():
        raise ValueError("no forecast valid times inside the period")
    return rmse(gauge.times, gauge.values, times[keep], values[keep],
                pair_tolerance=0.5 * gauge.interval)
