"""Experiment configuration: one versioned JSON document drives everything."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import ControlVector, PriorSpec
from .cycling import CycleSchedule
from .forcing import BiasModel, ForcingStrategy, Hydrograph, apply_bias, synth_event_hydrograph
from .geometry import FloodplainSubdomain, ReachGeometry
from .observations import ObsErrorModel
from .raster import read_asc, synthetic_dem
from .solver import RiverModel, SolverOptions

SCHEMA_VERSION = 1

DEFAULT_LEADS = (0.0, 21600.0, 43200.0, 64800.0, 86400.0, 108000.0, 129600.0)


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"config field '{field_path}': {message}")
        self.field_path = field_path


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _get(doc: dict, key: str, default):
    return doc.get(key, default)


@dataclass(frozen=True)
class DemConfig:
    path: str | None = None
    n_rows: int = 24
    n_cols: int = 24
    cell_size: float = 30.0
    relief: float = 6.0
    floor_below_crest: float = 2.0
    seed: int = 1
    nodata_fraction: float = 0.0


@dataclass(frozen=True)
class SubdomainConfig:
    id: int
    first_cell: int
    last_cell: int
    bank_height: float
    dem: DemConfig
    crest_elevation: float | None = None


@dataclass(frozen=True)
class ForcingConfig:
    base: float = 400.0
    peak: float = 5100.0
    t_peak: float = 259200.0
    rise_duration: float = 172800.0
    duration: float = 604800.0
    dt: float = 900.0
    shape: float = 4.0
    bias: BiasModel = field(default_factory=BiasModel)


@dataclass(frozen=True)
class ObservationConfig:
    error_model: ObsErrorModel = field(default_factory=ObsErrorModel)
    gauge_interval: float = 900.0
    wl_assim_interval: float = 3600.0
    overpass_times: tuple[float, ...] = ()
    hwm_count: int = 178


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    geometry_doc: dict
    subdomains: list[SubdomainConfig]
    priors: PriorSpec
    truth_controls: ControlVector
    forcing: ForcingConfig
    schedule: CycleSchedule
    observations: ObservationConfig
    n_members: int = 75
    mode: str = "IGDA"
    forcing_source: str = "V"
    strategy: ForcingStrategy | None = None
    forecast_issue_cycles: tuple[int, ...] = ()
    lead_times: tuple[float, ...] = DEFAULT_LEADS
    threads: int = 1
    solver_options: SolverOptions = field(default_factory=SolverOptions)

    # -- parsing -------------------------------------------------------------

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError("<document>", f"not valid JSON: {err}") from err
        return cls.from_dict(doc, base_dir=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        version = _need(doc, "schema_version", "")
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version}")
        seed = int(_need(doc, "seed", ""))
        out_dir = Path(_need(doc, "output_dir", ""))
        if base_dir is not None and not out_dir.is_absolute():
            out_dir = base_dir / out_dir

        geometry_doc = dict(_need(doc, "geometry", ""))

        subs_doc = _need(doc, "subdomains", "")
        if not isinstance(subs_doc, list) or not 1 <= len(subs_doc) <= 5:
            raise ConfigError("subdomains", "need a list of 1..5 subdomains")
        subdomains = []
        for i, sd in enumerate(subs_doc):
            p = f"subdomains[{i}]"
            dem_doc = _need(sd, "dem", p)
            dem_path = dem_doc.get("path")
            if dem_path is not None and base_dir is not None and not Path(dem_path).is_absolute():
                dem_path = str(base_dir / dem_path)
            if dem_path is not None and not Path(dem_path).exists():
                raise ConfigError(f"{p}.dem.path", f"DEM file not found: {dem_path}")
            dem = DemConfig(
                path=dem_path,
                n_rows=int(_get(dem_doc, "n_rows", 24)),
                n_cols=int(_get(dem_doc, "n_cols", 24)),
                cell_size=float(_get(dem_doc, "cell_size_m", 30.0)),
                relief=float(_get(dem_doc, "relief_m", 6.0)),
                floor_below_crest=float(_get(dem_doc, "floor_below_crest_m", 2.0)),
                seed=int(_get(dem_doc, "seed", i + 1)),
                nodata_fraction=float(_get(dem_doc, "nodata_fraction", 0.0)),
            )
            subdomains.append(SubdomainConfig(
                id=int(_need(sd, "id", p)),
                first_cell=int(_need(sd, "first_cell", p)),
                last_cell=int(_need(sd, "last_cell", p)),
                bank_height=float(_get(sd, "bank_height_m", 5.0)),
                dem=dem,
                crest_elevation=(float(sd["crest_elevation_m"])
                                 if "crest_elevation_m" in sd else None),
            ))
        if sorted(s.id for s in subdomains) != list(range(1, len(subdomains) + 1)):
            raise ConfigError("subdomains", "ids must be 1..K without gaps")

        priors_doc = _get(doc, "priors", {})
        try:
            priors = PriorSpec.build(
                ks_mean=priors_doc.get("ks_mean", 30.0),
                ks_std=priors_doc.get("ks_std", 5.0),
                mu_mean=float(priors_doc.get("mu_mean", 1.0)),
                mu_std=float(priors_doc.get("mu_std", 0.25)),
                dh_mean=float(priors_doc.get("dh_mean", 0.0)),
                dh_std=float(priors_doc.get("dh_std", 0.4)),
            )
        except ValueError as err:
            raise ConfigError("priors", str(err)) from err

        truth_doc = _need(doc, "truth", "")
        try:
            truth_controls = ControlVector.assemble(
                np.asarray(_need(truth_doc, "ks", "truth"), dtype=np.float64),
                float(_get(truth_doc, "mu", 1.0)),
                np.asarray(_get(truth_doc, "delta_h", [0.0] * 5), dtype=np.float64),
            )
        except ValueError as err:
            raise ConfigError("truth", str(err)) from err

        f_doc = _get(doc, "forcing", {})
        b_doc = _get(f_doc, "bias", {})
        try:
            bias = BiasModel(
                amplitude=float(_get(b_doc, "amplitude", 0.70)),
                shift=float(_get(b_doc, "shift_s", -43200.0)),
                smoothing=float(_get(b_doc, "smoothing_s", 0.0)),
            )
            forcing = ForcingConfig(
                base=float(_get(f_doc, "base_m3s", 400.0)),
                peak=float(_get(f_doc, "peak_m3s", 5100.0)),
                t_peak=float(_get(f_doc, "t_peak_s", 259200.0)),
                rise_duration=float(_get(f_doc, "rise_duration_s", 172800.0)),
                duration=float(_get(f_doc, "duration_s", 604800.0)),
                dt=float(_get(f_doc, "dt_s", 900.0)),
                shape=float(_get(f_doc, "shape", 4.0)),
                bias=bias,
            )
        except ValueError as err:
            raise ConfigError("forcing", str(err)) from err

        s_doc = _need(doc, "schedule", "")
        try:
            schedule = CycleSchedule(
                t0_first=float(_need(s_doc, "t0_first_s", "schedule")),
                n_cycles=int(_need(s_doc, "n_cycles", "schedule")),
                cycle_spacing=float(_get(s_doc, "cycle_spacing_s", 21600.0)),
                window_length=float(_get(s_doc, "window_s", 64800.0)),
                reanalysis_length=(float(s_doc["reanalysis_length_s"])
                                   if "reanalysis_length_s" in s_doc else None),
                spin_up=float(_get(s_doc, "spin_up_s", 10800.0)),
                forecast_horizon=float(_get(s_doc, "forecast_horizon_s", 129600.0)),
                nested_windows=tuple(_get(s_doc, "nested_windows_s", (43200.0, 21600.0))),
            )
        except ValueError as err:
            raise ConfigError("schedule", str(err)) from err

        o_doc = _get(doc, "observations", {})
        try:
            observations = ObservationConfig(
                error_model=ObsErrorModel(
                    sigma_wl=float(_get(o_doc, "sigma_wl_m", 0.05)),
                    sigma_wsr=float(_get(o_doc, "sigma_wsr", 0.05)),
                    alpha=float(_get(o_doc, "decay_alpha", 1.0)),
                    sigma_hwm=float(_get(o_doc, "sigma_hwm_m", 0.1)),
                ),
                gauge_interval=float(_get(o_doc, "gauge_interval_s", 900.0)),
                wl_assim_interval=float(_get(o_doc, "wl_assim_interval_s", 3600.0)),
                overpass_times=tuple(float(t) for t in _get(o_doc, "overpass_times_s", ())),
                hwm_count=int(_get(o_doc, "hwm_count", 178)),
            )
        except ValueError as err:
            raise ConfigError("observations", str(err)) from err

        mode = _get(doc, "mode", "IGDA")
        source = _get(doc, "forcing_source", "V")
        strategy_name = _get(doc, "strategy", None)
        strategy = None
        if strategy_name not in (None, "none"):
            try:
                strategy = ForcingStrategy(strategy_name)
            except ValueError as err:
                raise ConfigError("strategy", f"unknown strategy {strategy_name!r}") from err

        fc_doc = _get(doc, "forecast", {})
        issue_cycles = tuple(int(c) for c in _get(fc_doc, "issue_cycles", ()))
        lead_times = tuple(float(t) for t in _get(fc_doc, "lead_times_s", DEFAULT_LEADS))

        sol_doc = _get(doc, "solver", {})
        solver_options = SolverOptions(
            output_interval=float(_get(sol_doc, "output_interval_s", 900.0)),
            weir_coefficient=float(_get(sol_doc, "weir_coefficient", 1.7)),
            courant=float(_get(sol_doc, "courant", 0.9)),
        )

        cfg = cls(
            seed=seed,
            output_dir=out_dir,
            geometry_doc=geometry_doc,
            subdomains=subdomains,
            priors=priors,
            truth_controls=truth_controls,
            forcing=forcing,
            schedule=schedule,
            observations=observations,
            n_members=int(_get(_get(doc, "ensemble", {}), "n_members", 75)),
            mode=mode,
            forcing_source=source,
            strategy=strategy,
            forecast_issue_cycles=issue_cycles,
            lead_times=lead_times,
            threads=int(_get(doc, "threads", 1)),
            solver_options=solver_options,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mode not in ("OL", "IDA", "IGDA"):
            raise ConfigError("mode", f"must be OL, IDA or IGDA, got {self.mode!r}")
        if self.forcing_source not in ("V", "C"):
            raise ConfigError("forcing_source", "must be 'V' or 'C'")
        if self.n_members < 2:
            raise ConfigError("ensemble.n_members", "need at least 2 members")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        for c in self.forecast_issue_cycles:
            if not 0 <= c < self.schedule.n_cycles:
                raise ConfigError("forecast.issue_cycles", f"cycle {c} out of range")
        for lead in self.lead_times:
            if not 0 <= lead <= self.schedule.forecast_horizon:
                raise ConfigError("forecast.lead_times_s", f"lead {lead} beyond horizon")
        # spin-up of the first window must stay inside the forcing span
        t_min = self.schedule.first_start - self.schedule.spin_up
        if t_min < 0:
            raise ConfigError("schedule.t0_first_s",
                              "first window (with spin-up) starts before the forcing")
        event_end = self.forcing.duration
        if self.schedule.last_segment_end > event_end:
            raise ConfigError("schedule.n_cycles", "cycles extend beyond the event")
        for t in self.observations.overpass_times:
            if not 0 <= t <= event_end:
                raise ConfigError("observations.overpass_times_s",
                                  f"overpass {t} outside the event")

    def validate_forecast(self) -> None:
        """Consistency checks that only bind when forecasts are issued."""
        if self.strategy is None:
            raise ConfigError("strategy", "forecasts need a strategy (CC, VC or VQ)")
        if self.mode == "OL":
            raise ConfigError("strategy", "forecasts require a DA mode (IDA/IGDA)")
        expected = "C" if self.strategy is ForcingStrategy.CC else "V"
        if self.forcing_source != expected:
            raise ConfigError(
                "strategy",
                f"{self.strategy.value} requires forcing_source {expected!r}",
            )

    # -- builders ----------------------------------------------------------

    def build_geometry(self) -> ReachGeometry:
        g = self.geometry_doc
        try:
            return ReachGeometry.build(
                n_cells=int(_get(g, "n_cells", 100)),
                cell_length=float(_get(g, "cell_length_m", 500.0)),
                bed_slope=float(_get(g, "bed_slope", 5e-4)),
                upstream_bed_elevation=float(_get(g, "upstream_bed_elevation_m", 40.0)),
                channel_width=float(_get(g, "channel_width_m", 150.0)),
                segment_bounds=tuple(_get(g, "segment_bounds", (0, 16, 33, 50, 67, 84, 100))),
                stations=( {k: int(v) for k, v in g["stations"].items()}
                           if "stations" in g else None),
            )
        except ValueError as err:
            raise ConfigError("geometry", str(err)) from err

    def build_model(self) -> RiverModel:
        geometry = self.build_geometry()
        subs = []
        for sc in self.subdomains:
            if sc.last_cell >= geometry.n_cells:
                raise ConfigError(f"subdomains[{sc.id}]", "attached cells exceed reach")
            bed_max = float(geometry.bed_elevation[sc.first_cell:sc.last_cell + 1].max())
            crest = sc.crest_elevation if sc.crest_elevation is not None \
                else bed_max + sc.bank_height
            if sc.dem.path is not None:
                dem = read_asc(sc.dem.path)
            else:
                dem = synthetic_dem(
                    sc.dem.n_rows, sc.dem.n_cols, sc.dem.cell_size,
                    floor=crest - sc.dem.floor_below_crest,
                    relief=sc.dem.relief, seed=self.seed + sc.dem.seed,
                    nodata_fraction=sc.dem.nodata_fraction,
                )
            subs.append(FloodplainSubdomain(
                id=sc.id, first_cell=sc.first_cell, last_cell=sc.last_cell,
                crest_elevation=crest, dem=dem,
            ))
        try:
            return RiverModel(geometry, subs, options=self.solver_options)
        except ValueError as err:
            raise ConfigError("subdomains", str(err)) from err

    def build_hydrographs(self) -> tuple[Hydrograph, Hydrograph]:
        """(observed, biased) inflow pair for the event."""
        observed = synth_event_hydrograph(
            peak=self.forcing.peak, base=self.forcing.base,
            t_peak=self.forcing.t_peak, rise_duration=self.forcing.rise_duration,
            duration=self.forcing.duration, dt=self.forcing.dt,
            shape=self.forcing.shape,
        )
        biased = apply_bias(observed, self.forcing.bias)
        return observed, biased

    @property
    def label(self) -> str:
        return f"{self.mode}_{self.forcing_source}"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """CLI overrides: mode, forcing_source, strategy, seed, output_dir, threads."""
        allowed = {"mode", "forcing_source", "strategy", "seed", "output_dir", "threads"}
        unknown = set(kw) - allowed
        if unknown:
            raise ConfigError(",".join(sorted(unknown)), "not an overridable field")
        updates = {}
        for key, value in kw.items():
            if value is None:
                continue
            if key == "strategy":
                value = None if value == "none" else ForcingStrategy(value)
            if key == "output_dir":
                value = Path(value)
            updates[key] = value
        cfg = replace(self, **updates)
        cfg.validate()
        return cfg
