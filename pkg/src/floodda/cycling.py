"""Cycled reanalysis and the embedded forecast chain.

Each cycle assimilates observations over a window ending at the present
time, re-integrates the analysed ensemble, keeps the first segment of that
re-run as its contribution to the reanalysis, and stores member restarts at
the segment end, which is exactly where the next window starts.  When the
forecast is activated for a cycle, two nested shorter analyses refine the
controls before an ensemble forecast fan is issued; forecasts never feed
back into the cycled analysis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .control import ControlVector, PriorSpec
from .enkf import (
    Ensemble,
    analysis_update,
    build_obs_anamorphosis,
    draw_ensemble,
    propagate_analysis,
    propagate_background,
)
from .forcing import ForcingStrategy, Hydrograph, select_forcing
from .observations import ObsBank, ObsErrorModel, ObsKind, ObsVector, window_slice
from .rng import CYCLE, child_seed
from .solver import RiverModel, Trajectory, water_level_at, wsr
from .state import HydroState

log = logging.getLogger(__name__)

MODES = ("OL", "IDA", "IGDA")


@dataclass(frozen=True)
class CycleSchedule:
    """Timing of the cycled analysis.

    The window of cycle c is [t0(c) - window_length, t0(c)] with
    t0(c) = t0_first + c * cycle_spacing.  The reanalysis segment is the
    first ``reanalysis_length`` seconds of the window; continuity of the
    reanalysis chain requires reanalysis_length == cycle_spacing, so that
    each window starts exactly at the previous segment's end.
    """

    t0_first: float
    n_cycles: int
    cycle_spacing: float = 21600.0
    window_length: float = 64800.0
    reanalysis_length: float | None = None
    spin_up: float = 10800.0
    forecast_horizon: float = 129600.0
    nested_windows: tuple[float, ...] = (43200.0, 21600.0)

    def __post_init__(self) -> None:
        if self.reanalysis_length is None:
            object.__setattr__(self, "reanalysis_length", self.cycle_spacing)
        if self.n_cycles < 1:
            raise ValueError("need at least one cycle")
        if self.reanalysis_length > self.window_length:
            raise ValueError("reanalysis segment cannot exceed the window")
        if abs(self.reanalysis_length - self.cycle_spacing) > 1e-9:
            raise ValueError(
                "reanalysis_length must equal cycle_spacing for a gapless chain"
            )
        for w in self.nested_windows:
            if not 0 < w < self.window_length:
                raise ValueError("nested windows must be shorter than the window")

    def t0(self, c: int) -> float:
        return self.t0_first + c * self.cycle_spacing

    def window(self, c: int) -> tuple[float, float]:
        t0 = self.t0(c)
        return (t0 - self.window_length, t0)

    def segment(self, c: int) -> tuple[float, float]:
        a = self.t0(c) - self.window_length
        return (a, a + self.reanalysis_length)

    @property
    def first_start(self) -> float:
        return self.t0_first - self.window_length

    @property
    def last_segment_end(self) -> float:
        return self.segment(self.n_cycles - 1)[1]


@dataclass
class SeriesBundle:
    """Ensemble-mean station levels and subdomain stage / wet-surface ratios."""

    times: np.ndarray
    wl: dict[str, np.ndarray]
    stage: dict[int, np.ndarray]
    wsr: dict[int, np.ndarray]

    @classmethod
    def from_trajectories(cls, model: RiverModel, trajectories: list[Trajectory],
                          t_a: float, t_b: float) -> "SeriesBundle":
        sliced = [t.sliced(t_a, t_b) for t in trajectories]
        times = sliced[0].times
        for s in sliced[1:]:
            if s.times.shape != times.shape or not np.allclose(s.times, times):
                raise ValueError("member trajectories sample different grids")
        wl = {}
        for station in model.geometry.station_cells:
            wl[station] = np.mean([s.wl_series(station) for s in sliced], axis=0)
        stage = {}
        wsr_mean = {}
        for k, sub in enumerate(model.subdomains):
            stage[sub.id] = np.mean([s.stage_series(k) for s in sliced], axis=0)
            wsr_mean[sub.id] = np.mean(
                [[wsr(st, sub) for st in s.states] for s in sliced], axis=0)
        return cls(times=times, wl=wl, stage=stage, wsr=wsr_mean)

    @classmethod
    def concatenate(cls, bundles: list["SeriesBundle"]) -> "SeriesBundle":
        """Join abutting bundles, dropping duplicated joint instants."""
        if not bundles:
            raise ValueError("nothing to concatenate")
        times = [bundles[0].times]
        pieces = {key: [getattr(bundles[0], key)] for key in ("wl", "stage", "wsr")}
        for b in bundles[1:]:
            start = 0
            if abs(b.times[0] - times[-1][-1]) <= 1e-6:
                start = 1
            times.append(b.times[start:])
            for key in ("wl", "stage", "wsr"):
                pieces[key].append({k: v[start:] for k, v in getattr(b, key).items()})
        out_times = np.concatenate(times)
        if np.any(np.diff(out_times) <= 0):
            raise ValueError("bundles do not abut: non-increasing concatenated times")

        def merge(dicts):
            return {k: np.concatenate([d[k] for d in dicts]) for k in dicts[0]}

        return cls(times=out_times, wl=merge(pieces["wl"]),
                   stage=merge(pieces["stage"]), wsr=merge(pieces["wsr"]))


@dataclass
class ControlStats:
    background_mean: np.ndarray
    background_std: np.ndarray
    analysis_mean: np.ndarray
    analysis_std: np.ndarray
    n_obs_wl: int
    n_obs_wsr: int
    analysis_skipped: bool = False


@dataclass
class ForecastResult:
    """A 36 h ensemble forecast issued at one cycle's present time."""

    issue_time: float
    strategy: ForcingStrategy
    times: np.ndarray
    member_wl: dict[str, np.ndarray]      # station -> (n_members, n_times)
    mean_wl: dict[str, np.ndarray]
    mean_stage: dict[int, np.ndarray]
    mean_wsr: dict[int, np.ndarray]
    initial_states: list[HydroState] = field(default_factory=list, repr=False)
    controls: list[ControlVector] = field(default_factory=list, repr=False)
    # mean |ensemble WL - newest observation| after the full-window analysis
    # and after each nested one, keyed by window length label
    at_issue_misfit: dict[str, float] = field(default_factory=dict)

    def value_at(self, station: str, valid_time: float, tol: float = 450.0) -> float:
        i = int(np.argmin(np.abs(self.times - valid_time)))
        if abs(self.times[i] - valid_time) > tol:
            raise KeyError(f"no forecast sample near {valid_time}")
        return float(self.mean_wl[station][i])


@dataclass
class CycleResult:
    cycle: int
    t0: float
    stats: ControlStats
    segment: SeriesBundle
    restarts: list[HydroState]
    forecasts: dict[str, ForecastResult] = field(default_factory=dict)


class RestartStore:
    """Per-cycle member restarts (in memory; the experiment layer persists them)."""

    def __init__(self) -> None:
        self._store: dict[int, list[HydroState]] = {}

    def put(self, cycle: int, states: list[HydroState]) -> None:
        self._store[cycle] = states

    def get(self, cycle: int) -> list[HydroState]:
        if cycle not in self._store:
            raise KeyError(f"missing restart for cycle {cycle}")
        return self._store[cycle]

    def __contains__(self, cycle: int) -> bool:
        return cycle in self._store


class CycleRunner:
    """Drives the cycled analysis for one experiment."""

    def __init__(
        self,
        model: RiverModel,
        schedule: CycleSchedule,
        prior: PriorSpec,
        bank: ObsBank,
        error_model: ObsErrorModel,
        observed: Hydrograph,
        biased: Hydrograph,
        mode: str = "IGDA",
        forcing_source: str = "V",
        n_members: int = 75,
        seed: int = 0,
        threads: int = 1,
        wl_interval: float = 3600.0,
        cold_state: HydroState | None = None,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if forcing_source not in ("V", "C"):
            raise ValueError("forcing_source must be 'V' or 'C'")
        self.model = model
        self.schedule = schedule
        self.prior = prior
        self.bank = bank
        self.error_model = error_model
        self.observed = observed
        self.biased = biased
        self.mode = mode
        self.forcing_source = forcing_source
        self.n_members = n_members
        self.seed = seed
        self.threads = threads
        self.wl_interval = wl_interval
        self.reanalysis_forcing = observed if forcing_source == "V" else biased
        self._cold_state = cold_state
        self._prev_stats: ControlStats | None = None

    # -- observation handling -------------------------------------------------

    def observations_for(self, window: tuple[float, float], t0: float) -> ObsVector:
        obs = window_slice(self.bank, window, self.error_model, t0, self.wl_interval)
        if self.mode == "OL":
            return ObsVector([])
        if self.mode == "IDA":
            return obs.subset(lambda e: e.kind is ObsKind.WL)
        return obs

    # -- priors ----------------------------------------------------------------

    def cycle_prior(self, cycle: int, has_wsr: bool) -> PriorSpec:
        """Prior for this cycle's background draw.

        After the first cycle the ensemble is re-drawn around the previous
        analysis mean with spread floored at half the base prior spread,
        which prevents filter collapse over long chains.  Stage-correction
        elements stay pinned at zero in windows without any WSR observation.
        """
        if self._prev_stats is None:
            spec = self.prior
        else:
            stds = np.maximum(self._prev_stats.analysis_std, 0.5 * self.prior.stds)
            spec = self.prior.recentred(self._prev_stats.analysis_mean, stds)
        if not has_wsr:
            spec = spec.fixed_delta_h()
        return spec

    # -- cold start --------------------------------------------------------

    def cold_start_state(self) -> HydroState:
        if self._cold_state is not None:
            return self._cold_state
        t_start = self.schedule.first_start - self.schedule.spin_up
        control = self.prior.mean_control()
        q0 = control.mu * float(self.reanalysis_forcing(t_start))
        self._cold_state = self.model.initial_state(q0, control.friction(), time=t_start)
        return self._cold_state

    # -- cycles ------------------------------------------------------------

    def run_reanalysis_cycle(
        self,
        cycle: int,
        store: RestartStore,
        forecast_strategies: tuple[ForcingStrategy, ...] = (),
    ) -> CycleResult:
        if self.mode == "OL":
            raise RuntimeError("open loop runs use run_open_loop()")
        window = self.schedule.window(cycle)
        t0 = self.schedule.t0(cycle)
        seg_a, seg_b = self.schedule.segment(cycle)
        obs = self.observations_for(window, t0)
        has_wsr = obs.count(ObsKind.WSR) > 0

        if cycle == 0:
            prev = [self.cold_start_state()] * self.n_members
        else:
            prev = store.get(cycle - 1)
        prior_c = self.cycle_prior(cycle, has_wsr)
        controls = draw_ensemble(prior_c, self.n_members,
                                 child_seed(self.seed, CYCLE, cycle, 0))

        background = propagate_background(
            self.model, prev, controls, self.reanalysis_forcing, window,
            template=obs, spin_up=self.schedule.spin_up,
            prior=prior_c, seed=child_seed(self.seed, CYCLE, cycle, 1),
            threads=self.threads,
        )
        if len(obs) >= 1:
            anamorphosis = build_obs_anamorphosis(background, obs)
            result = analysis_update(background, obs, anamorphosis,
                                     child_seed(self.seed, CYCLE, cycle, 2))
            analyzed = result.controls
            stats = ControlStats(
                background_mean=result.background_mean,
                background_std=result.background_std,
                analysis_mean=result.analysis_mean,
                analysis_std=result.analysis_std,
                n_obs_wl=obs.count(ObsKind.WL),
                n_obs_wsr=obs.count(ObsKind.WSR),
            )
        else:
            log.info("cycle %d: empty observation window, analysis skipped", cycle)
            analyzed = [m.control for m in background.members]
            xb = background.controls_matrix()
            stats = ControlStats(
                background_mean=xb.mean(axis=0), background_std=xb.std(axis=0, ddof=1),
                analysis_mean=xb.mean(axis=0), analysis_std=xb.std(axis=0, ddof=1),
                n_obs_wl=0, n_obs_wsr=0, analysis_skipped=True,
            )

        analysis = propagate_analysis(
            self.model, prev, analyzed, self.reanalysis_forcing, window,
            template=obs, spin_up=self.schedule.spin_up,
            prior=prior_c, seed=child_seed(self.seed, CYCLE, cycle, 3),
            threads=self.threads,
        )
        segment = SeriesBundle.from_trajectories(
            self.model, [m.trajectory for m in analysis.members], seg_a, seg_b)
        restarts = [m.trajectory.state_at(seg_b) for m in analysis.members]
        store.put(cycle, restarts)
        self._prev_stats = stats

        forecasts = {}
        for strategy in forecast_strategies:
            forecasts[strategy.value] = self._forecast(cycle, analysis, analyzed, obs, strategy)
        return CycleResult(cycle=cycle, t0=t0, stats=stats, segment=segment,
                           restarts=restarts, forecasts=forecasts)

    def run_forecast_cycle(
        self, cycle: int, store: RestartStore, strategy: ForcingStrategy
    ) -> CycleResult:
        return self.run_reanalysis_cycle(cycle, store, forecast_strategies=(strategy,))

    def _forecast(
        self,
        cycle: int,
        analysis: Ensemble,
        controls: list[ControlVector],
        obs_full: ObsVector,
        strategy: ForcingStrategy,
    ) -> ForecastResult:
        """Nested shorter analyses, then the ensemble forecast fan."""
        expected_source = "C" if strategy is ForcingStrategy.CC else "V"
        if expected_source != self.forcing_source:
            raise ValueError(
                f"strategy {strategy.value} needs forcing source {expected_source!r}"
            )
        t0 = self.schedule.t0(cycle)
        ens = analysis
        ctrls = controls
        misfits = {}
        label = f"{self.schedule.window_length / 3600:g}h"
        misfits[label] = self._at_issue_misfit(ens, obs_full)
        for stage_i, sub_len in enumerate(self.schedule.nested_windows):
            t_a = t0 - sub_len
            obs_sub = self.observations_for((t_a, t0), t0)
            states = [m.trajectory.state_at(t_a) for m in ens.members]
            code = 10 * (stage_i + 1)
            background = propagate_background(
                self.model, states, ctrls, self.reanalysis_forcing, (t_a, t0),
                template=obs_sub, spin_up=0.0, threads=self.threads,
            )
            if len(obs_sub) >= 1:
                anamorphosis = build_obs_anamorphosis(background, obs_sub)
                result = analysis_update(background, obs_sub, anamorphosis,
                                         child_seed(self.seed, CYCLE, cycle, code + 1))
                ctrls = result.controls
            ens = propagate_analysis(
                self.model, states, ctrls, self.reanalysis_forcing, (t_a, t0),
                template=obs_sub, spin_up=0.0, threads=self.threads,
            )
            misfits[f"{sub_len / 3600:g}h"] = self._at_issue_misfit(ens, obs_full)

        forecast_forcing = select_forcing(strategy, "forecast", self.observed,
                                          self.biased, t0,
                                          horizon=self.schedule.forecast_horizon + 1.0)
        horizon = self.schedule.forecast_horizon
        initial_states = [m.trajectory.end_state for m in ens.members]
        trajectories = []
        for i, member in enumerate(ens.members):
            trajectories.append(self.model.run(
                initial_states[i], ctrls[i], forecast_forcing, (t0, t0 + horizon)))
        times = trajectories[0].times
        member_wl = {}
        mean_wl = {}
        for station in self.model.geometry.station_cells:
            rows = np.array([t.wl_series(station) for t in trajectories])
            member_wl[station] = rows
            mean_wl[station] = rows.mean(axis=0)
        mean_stage = {}
        mean_wsr = {}
        for k, sub in enumerate(self.model.subdomains):
            mean_stage[sub.id] = np.mean(
                [t.stage_series(k) for t in trajectories], axis=0)
            mean_wsr[sub.id] = np.mean(
                [[wsr(st, sub) for st in t.states] for t in trajectories], axis=0)
        return ForecastResult(
            issue_time=t0, strategy=strategy, times=times,
            member_wl=member_wl, mean_wl=mean_wl,
            mean_stage=mean_stage, mean_wsr=mean_wsr,
            initial_states=initial_states, controls=list(ctrls),
            at_issue_misfit=misfits,
        )

    def _at_issue_misfit(self, ens: Ensemble, obs: ObsVector) -> float:
        """Mean absolute misfit of the ensemble-mean levels to the newest WL
        observation at each station."""
        wl_entries = [e for e in obs.entries if e.kind is ObsKind.WL]
        if not wl_entries:
            return float("nan")
        newest: dict[str, tuple[float, float]] = {}
        for e in wl_entries:
            if str(e.ident) not in newest or e.time > newest[str(e.ident)][0]:
                newest[str(e.ident)] = (e.time, e.value)
        misfits = []
        for station, (t, value) in sorted(newest.items()):
            sims = []
            for m in ens.members:
                i = m.trajectory.nearest_index(t)
                sims.append(water_level_at(self.model.geometry,
                                           m.trajectory.states[i], station))
            misfits.append(abs(float(np.mean(sims)) - value))
        return float(np.mean(misfits))

    # -- whole chains --------------------------------------------------------

    def run_open_loop(self) -> list[CycleResult]:
        """Free run with the prior-mean control, sliced into cycle segments."""
        control = self.prior.mean_control()
        schedule = self.schedule
        t_a = schedule.first_start
        t_b = schedule.last_segment_end
        state0 = self.cold_start_state()
        spin = self.model.run(state0, control, self.reanalysis_forcing,
                              (t_a - schedule.spin_up, t_a))
        traj = self.model.run(spin.end_state, control, self.reanalysis_forcing, (t_a, t_b))
        results = []
        zeros = np.zeros_like(self.prior.means)
        for c in range(schedule.n_cycles):
            seg_a, seg_b = schedule.segment(c)
            segment = SeriesBundle.from_trajectories(self.model, [traj], seg_a, seg_b)
            stats = ControlStats(
                background_mean=self.prior.means, background_std=zeros,
                analysis_mean=self.prior.means, analysis_std=zeros,
                n_obs_wl=0, n_obs_wsr=0, analysis_skipped=True,
            )
            results.append(CycleResult(
                cycle=c, t0=schedule.t0(c), stats=stats, segment=segment,
                restarts=[traj.state_at(seg_b)],
            ))
        return results

    def run_chain(
        self,
        forecast_cycles: dict[int, tuple[ForcingStrategy, ...]] | None = None,
        store: RestartStore | None = None,
    ) -> list[CycleResult]:
        """Run every cycle in order; cycles are strictly sequential."""
        if self.mode == "OL":
            return self.run_open_loop()
        store = store if store is not None else RestartStore()
        forecast_cycles = forecast_cycles or {}
        results = []
        for c in range(self.schedule.n_cycles):
            strategies = tuple(forecast_cycles.get(c, ()))
            results.append(self.run_reanalysis_cycle(c, store, strategies))
        return results


def extract_leadtime_series(
    forecasts: list[ForecastResult], lead: float, station: str
) -> tuple[np.ndarray, np.ndarray]:
    """Series of forecast values at a fixed lead, keyed by valid time."""
    if not forecasts:
        raise ValueError("no forecasts given")
    horizon = float(forecasts[0].times[-1] - forecasts[0].issue_time)
    if not 0 <= lead <= horizon:
        raise ValueError(f"lead {lead} outside [0, {horizon}]")
    pairs = sorted(
        (f.issue_time + lead, f.value_at(station, f.issue_time + lead))
        for f in forecasts
    )
    times = np.array([t for t, _ in pairs])
    values = np.array([v for _, v in pairs])
    return times, values
