"""Experiment commands behind the CLI: truth synthesis, reanalysis runs,
forecast chains, and artifact-only scoring.

Every command reads and writes plain files under the configured output
directory; `run_metrics` recomputes all scores from stored artifacts alone,
so a finished run directory is self-contained.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .cycling import CycleResult, CycleRunner, RestartStore, SeriesBundle
from .forcing import ForcingStrategy, Hydrograph, select_forcing
from .metrics import NODATA_CODE, contingency, csi, gain, hwm_rmse, rmse
from .observations import (
    GaugeSeries,
    HwmSet,
    ObsBank,
    OverpassSet,
    synthesize_truth_obs,
)
from .raster import DemRaster, read_asc, write_asc
from .solver import flood_extent, write_trajectory_csv
from .state import save_states

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    return repr(float(x))


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_series_csv(path: Path, times, values, value_name: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_s", value_name])
        for t, v in zip(times, values):
            w.writerow([_fmt(t), _fmt(v)])


def _read_series_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    times, values = [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        next(r)
        for row in r:
            times.append(float(row[0]))
            values.append(float(row[1]))
    return np.array(times), np.array(values)


def _write_int_asc(path: Path, labels: np.ndarray, cell_size: float,
                   origin=(0.0, 0.0), nodata: int = NODATA_CODE) -> None:
    with open(path, "w") as f:
        f.write(f"ncols {labels.shape[1]}\n")
        f.write(f"nrows {labels.shape[0]}\n")
        f.write(f"xllcorner {origin[0]!r}\n")
        f.write(f"yllcorner {origin[1]!r}\n")
        f.write(f"cellsize {cell_size!r}\n")
        f.write(f"NODATA_value {nodata}\n")
        for row in labels:
            f.write(" ".join(str(int(v)) for v in row))
            f.write("\n")


def _mask_raster(mask: np.ndarray, valid: np.ndarray, cell_size: float) -> DemRaster:
    data = np.where(valid, mask.astype(np.float64), np.nan)
    return DemRaster(elevation=data, cell_size=cell_size)


# ---------------------------------------------------------------------------
# truth


def run_truth(config: ExperimentConfig) -> Path:
    """Truth run plus the synthetic observation files."""
    model = config.build_model()
    observed, biased = config.build_hydrographs()
    truth_dir = config.output_dir / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)

    control = config.truth_controls
    initial = model.initial_state(control.mu * float(observed(0.0)), control.friction())
    truth = model.run(initial, control, observed, (0.0, config.forcing.duration),
                      extra_times=config.observations.overpass_times)
    bank = synthesize_truth_obs(
        truth, model, config.observations.overpass_times,
        config.observations.error_model, seed=config.seed,
        gauge_interval=config.observations.gauge_interval,
        hwm_count=config.observations.hwm_count,
    )

    _write_json(truth_dir / "controls.json", {
        "ks": [float(v) for v in control.ks],
        "mu": float(control.mu),
        "delta_h": [float(v) for v in control.delta_h],
    })
    observed.to_csv(truth_dir / "hydrograph_observed.csv")
    biased.to_csv(truth_dir / "hydrograph_biased.csv")
    for gauge in bank.gauges:
        gauge.to_csv(truth_dir / f"gauge_{gauge.station}.csv")
    bank.overpasses.to_csv(truth_dir / "overpasses.csv")
    bank.hwms.to_csv(truth_dir / "hwm.csv")
    write_trajectory_csv(truth_dir / "wl_truth.csv", truth)
    for sub in model.subdomains:
        write_asc(sub.dem, truth_dir / f"dem_{sub.id}.asc")
    for t in config.observations.overpass_times:
        state = truth.state_at(float(t))
        for sub in model.subdomains:
            mask = flood_extent(state, sub)
            write_asc(_mask_raster(mask, sub.dem.valid_mask, sub.dem.cell_size),
                      truth_dir / f"extent_obs_t{int(t)}_s{sub.id}.asc")
    _write_json(truth_dir / "truth_meta.json", {
        "schema_version": 1,
        "seed": config.seed,
        "observed_peak_m3s": float(observed.peak()[1]),
        "observed_peak_time_s": float(observed.peak()[0]),
        "biased_peak_m3s": float(biased.peak()[1]),
        "overpass_times_s": [float(t) for t in config.observations.overpass_times],
        "stations": sorted(model.geometry.station_cells),
    })
    log.info("truth artifacts written to %s", truth_dir)
    return truth_dir


# ---------------------------------------------------------------------------
# shared run machinery


def load_bank(config: ExperimentConfig, model) -> ObsBank:
    truth_dir = config.output_dir / "truth"
    if not truth_dir.exists():
        raise FileNotFoundError(f"missing truth artifacts under {truth_dir}; "
                                "run the truth command first")
    gauges = [
        GaugeSeries.from_csv(truth_dir / f"gauge_{s}.csv", station=s,
                             interval=config.observations.gauge_interval)
        for s in sorted(model.geometry.station_cells)
    ]
    overpasses = OverpassSet.from_csv(truth_dir / "overpasses.csv")
    hwms = HwmSet.from_csv(truth_dir / "hwm.csv")
    return ObsBank(gauges=gauges, overpasses=overpasses, hwms=hwms)


def _build_runner(config: ExperimentConfig):
    model = config.build_model()
    observed, biased = config.build_hydrographs()
    bank = load_bank(config, model)
    runner = CycleRunner(
        model, config.schedule, config.priors, bank,
        config.observations.error_model, observed, biased,
        mode=config.mode, forcing_source=config.forcing_source,
        n_members=config.n_members, seed=config.seed, threads=config.threads,
        wl_interval=config.observations.wl_assim_interval,
    )
    return runner


def _copy_obs_inputs(config: ExperimentConfig, runner, run_dir: Path) -> None:
    obs_dir = run_dir / "obs"
    obs_dir.mkdir(parents=True, exist_ok=True)
    truth_dir = config.output_dir / "truth"
    names = ["overpasses.csv", "hwm.csv"]
    names += [f"gauge_{s}.csv" for s in sorted(runner.model.geometry.station_cells)]
    names += [f"dem_{sub.id}.asc" for sub in runner.model.subdomains]
    for t in config.observations.overpass_times:
        names += [f"extent_obs_t{int(t)}_s{sub.id}.asc" for sub in runner.model.subdomains]
    for name in names:
        src = truth_dir / name
        if not src.exists():
            raise FileNotFoundError(f"missing truth artifact {src}")
        shutil.copyfile(src, obs_dir / name)


def _write_cycle_artifacts(run_dir: Path, results: list[CycleResult]) -> None:
    from .control import ELEMENT_NAMES

    for res in results:
        cdir = run_dir / "cycles" / f"c{res.cycle:04d}"
        cdir.mkdir(parents=True, exist_ok=True)
        with open(cdir / "analysis.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cycle", "element", "background_mean", "background_std",
                        "analysis_mean", "analysis_std"])
            for j, name in enumerate(ELEMENT_NAMES):
                w.writerow([res.cycle, name,
                            _fmt(res.stats.background_mean[j]),
                            _fmt(res.stats.background_std[j]),
                            _fmt(res.stats.analysis_mean[j]),
                            _fmt(res.stats.analysis_std[j])])
        save_states(cdir / "restart.bin", res.restarts)
        _write_json(cdir / "cycle_meta.json", {
            "cycle": res.cycle,
            "t0_s": float(res.t0),
            "n_obs_wl": res.stats.n_obs_wl,
            "n_obs_wsr": res.stats.n_obs_wsr,
            "analysis_skipped": bool(res.stats.analysis_skipped),
        })


def _write_reanalysis_series(run_dir: Path, model, results: list[CycleResult]) -> None:
    merged = SeriesBundle.concatenate([r.segment for r in results])
    rdir = run_dir / "reanalysis"
    rdir.mkdir(parents=True, exist_ok=True)
    for station, series in sorted(merged.wl.items()):
        _write_series_csv(rdir / f"wl_{station}.csv", merged.times, series, "wl_m")
    for sub_id, series in sorted(merged.stage.items()):
        _write_series_csv(rdir / f"stage_{sub_id}.csv", merged.times, series, "stage_m")
    for sub_id, series in sorted(merged.wsr.items()):
        _write_series_csv(rdir / f"wsr_{sub_id}.csv", merged.times, series, "wsr")


def _write_run_meta(config: ExperimentConfig, runner, run_dir: Path,
                    has_forecasts: bool) -> None:
    _write_json(run_dir / "run_meta.json", {
        "schema_version": 1,
        "experiment": config.label,
        "mode": config.mode,
        "forcing_source": config.forcing_source,
        "strategy": config.strategy.value if config.strategy else None,
        "seed": config.seed,
        "n_members": config.n_members,
        "threads": config.threads,
        "gauge_interval_s": config.observations.gauge_interval,
        "overpass_times_s": [float(t) for t in config.observations.overpass_times],
        "stations": sorted(runner.model.geometry.station_cells),
        "subdomains": [sub.id for sub in runner.model.subdomains],
        "lead_times_s": [float(t) for t in config.lead_times],
        "has_forecasts": has_forecasts,
        "schedule": {
            "t0_first_s": config.schedule.t0_first,
            "n_cycles": config.schedule.n_cycles,
            "cycle_spacing_s": config.schedule.cycle_spacing,
            "window_s": config.schedule.window_length,
            "forecast_horizon_s": config.schedule.forecast_horizon,
        },
    })


def run_reanalysis(config: ExperimentConfig) -> Path:
    """Execute the cycle chain in the configured mode and write artifacts."""
    runner = _build_runner(config)
    run_dir = config.output_dir / "runs" / config.label
    run_dir.mkdir(parents=True, exist_ok=True)
    results = runner.run_chain()
    _copy_obs_inputs(config, runner, run_dir)
    _write_cycle_artifacts(run_dir, results)
    _write_reanalysis_series(run_dir, runner.model, results)
    _write_run_meta(config, runner, run_dir, has_forecasts=False)
    log.info("reanalysis artifacts written to %s", run_dir)
    return run_dir


def _forcing_log(hydro: Hydrograph, window: tuple[float, float], path: Path) -> None:
    t0, t1 = window
    times = np.arange(t0, t1 + 1e-6, 900.0)
    values = np.array([float(hydro(min(max(t, hydro.span[0]), hydro.span[1])))
                       for t in times])
    _write_series_csv(path, times, values, "q_m3s")


def run_forecast(config: ExperimentConfig, issue_cycles=None) -> Path:
    """Reanalysis chain with forecast fans at the issue cycles."""
    config.validate_forecast()
    issue_cycles = tuple(issue_cycles if issue_cycles is not None
                         else config.forecast_issue_cycles)
    if not issue_cycles:
        raise FileNotFoundError("no forecast issue cycles configured")
    runner = _build_runner(config)
    run_dir = config.output_dir / "runs" / f"{config.label}_{config.strategy.value}"
    run_dir.mkdir(parents=True, exist_ok=True)
    forecast_map = {c: (config.strategy,) for c in issue_cycles}
    results = runner.run_chain(forecast_cycles=forecast_map)
    _copy_obs_inputs(config, runner, run_dir)
    _write_cycle_artifacts(run_dir, results)
    _write_reanalysis_series(run_dir, runner.model, results)
    _write_run_meta(config, runner, run_dir, has_forecasts=True)

    observed, biased = runner.observed, runner.biased
    bank = runner.bank
    forecasts = []
    for res in results:
        for strat_name, fc in sorted(res.forecasts.items()):
            forecasts.append(fc)
            fdir = run_dir / "forecasts" / f"issue_{int(fc.issue_time)}"
            fdir.mkdir(parents=True, exist_ok=True)
            for station, series in sorted(fc.mean_wl.items()):
                _write_series_csv(fdir / f"mean_{station}.csv", fc.times, series, "wl_m")
            for sub_id, series in sorted(fc.mean_wsr.items()):
                _write_series_csv(fdir / f"wsr_{sub_id}.csv", fc.times, series, "wsr")
            for sub_id, series in sorted(fc.mean_stage.items()):
                _write_series_csv(fdir / f"stage_{sub_id}.csv", fc.times, series, "stage_m")
            stations = sorted(fc.member_wl)
            for i in range(config.n_members):
                with open(fdir / f"member{i:03d}.csv", "w", newline="") as f:
                    w = csv.writer(f)
                    w.writerow(["time_s", "station", "value_m"])
                    for j, t in enumerate(fc.times):
                        for s in stations:
                            w.writerow([_fmt(t), s, _fmt(fc.member_wl[s][i, j])])
            strategy = ForcingStrategy(strat_name)
            re_forcing = runner.reanalysis_forcing
            fc_forcing = select_forcing(strategy, "forecast", observed, biased,
                                        fc.issue_time,
                                        horizon=config.schedule.forecast_horizon + 1.0)
            _forcing_log(re_forcing,
                         (fc.issue_time - config.schedule.window_length, fc.issue_time),
                         fdir / "forcing_reanalysis.csv")
            _forcing_log(fc_forcing,
                         (fc.issue_time, fc.issue_time + config.schedule.forecast_horizon),
                         fdir / "forcing_forecast.csv")

            # contingency of the forecast mean state at overpasses in-horizon
            fc_csi = {}
            for t in config.observations.overpass_times:
                if not fc.issue_time < t <= fc.issue_time + config.schedule.forecast_horizon:
                    continue
                i = int(np.argmin(np.abs(fc.times - t)))
                if abs(fc.times[i] - t) > 450.0:
                    continue
                counts = {"TP": 0, "TN": 0, "FP": 0, "FN": 0}
                for sub in runner.model.subdomains:
                    obs_mask_r = read_asc(config.output_dir / "truth" /
                                          f"extent_obs_t{int(t)}_s{sub.id}.asc")
                    valid = obs_mask_r.valid_mask
                    obs_mask = np.nan_to_num(obs_mask_r.elevation) >= 0.5
                    stage = fc.mean_stage[sub.id][i]
                    sim_mask = sub.dem.elevation <= stage
                    sim_mask &= sub.dem.valid_mask
                    cmap = contingency(sim_mask, obs_mask, valid & sub.dem.valid_mask)
                    _write_int_asc(fdir / f"contingency_t{int(t)}_s{sub.id}.asc",
                                   cmap.labels, sub.dem.cell_size)
                    for key in counts:
                        counts[key] += cmap.counts[key]
                denom = counts["TP"] + counts["FP"] + counts["FN"]
                fc_csi[str(int(t))] = (100.0 if denom == 0
                                       else 100.0 * counts["TP"] / denom)
            _write_json(fdir / "meta.json", {
                "issue_time_s": float(fc.issue_time),
                "strategy": strat_name,
                "horizon_s": float(config.schedule.forecast_horizon),
                "at_issue_misfit_m": {k: (None if np.isnan(v) else float(v))
                                      for k, v in fc.at_issue_misfit.items()},
                "csi_pct": fc_csi,
            })

    # lead-time RMSE table against the gauges, over the whole event
    rows = []
    for station in sorted(runner.model.geometry.station_cells):
        gauge = [g for g in bank.gauges if g.station == station][0]
        for lead in config.lead_times:
            try:
                times, values = _leadtime_series(forecasts, lead, station)
                value = rmse(gauge.times, gauge.values, times, values,
                             pair_tolerance=0.5 * gauge.interval)
            except (ValueError, KeyError):
                value = float("nan")
            rows.append((int(lead), station, value))
    with open(run_dir / "forecasts" / "leadtime_rmse.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lead_s", "station", "rmse_m"])
        for lead, station, value in rows:
            w.writerow([lead, station, _fmt(value)])
    log.info("forecast artifacts written to %s", run_dir)
    return run_dir


def _leadtime_series(forecasts, lead, station):
    from .cycling import extract_leadtime_series

    return extract_leadtime_series(forecasts, lead, station)


# ---------------------------------------------------------------------------
# metrics from artifacts only


def _score_run(run_dir: Path) -> dict:
    meta = json.loads((run_dir / "run_meta.json").read_text())
    obs_dir = run_dir / "obs"
    stations = meta["stations"]
    gauge_interval = float(meta["gauge_interval_s"])

    rmse_by_station = {}
    for station in stations:
        sim_t, sim_v = _read_series_csv(run_dir / "reanalysis" / f"wl_{station}.csv")
        gauge = GaugeSeries.from_csv(obs_dir / f"gauge_{station}.csv", station=station,
                                     interval=gauge_interval)
        keep = (gauge.times >= sim_t[0]) & (gauge.times <= sim_t[-1])
        rmse_by_station[station] = rmse(sim_t, sim_v,
                                        gauge.times[keep], gauge.values[keep],
                                        pair_tolerance=0.5 * gauge_interval)

    hwms = HwmSet.from_csv(obs_dir / "hwm.csv")
    simulated_max = {}
    for station in stations:
        sim_t, sim_v = _read_series_csv(run_dir / "reanalysis" / f"wl_{station}.csv")
        simulated_max[("station", station)] = float(np.max(sim_v))
    for sub_id in meta["subdomains"]:
        sim_t, sim_v = _read_series_csv(run_dir / "reanalysis" / f"stage_{sub_id}.csv")
        simulated_max[("subdomain", sub_id)] = float(np.max(sim_v))
    hwm_score = hwm_rmse(simulated_max, hwms)

    csi_scores: dict[str, dict[str, float]] = {}
    wsr_err: dict[str, dict[str, float]] = {}
    overpasses = OverpassSet.from_csv(obs_dir / "overpasses.csv")
    mdir = run_dir / "metrics"
    mdir.mkdir(exist_ok=True)
    for t in meta["overpass_times_s"]:
        key = str(int(t))
        csi_scores[key] = {}
        wsr_err[key] = {}
        totals = {"TP": 0, "TN": 0, "FP": 0, "FN": 0}
        op_index = int(np.argmin(np.abs(overpasses.times - t)))
        for sub_id in meta["subdomains"]:
            dem = read_asc(obs_dir / f"dem_{sub_id}.asc")
            obs_mask_r = read_asc(obs_dir / f"extent_obs_t{int(t)}_s{sub_id}.asc")
            valid = dem.valid_mask & obs_mask_r.valid_mask
            obs_mask = np.nan_to_num(obs_mask_r.elevation) >= 0.5
            stage_t, stage_v = _read_series_csv(
                run_dir / "reanalysis" / f"stage_{sub_id}.csv")
            i = int(np.argmin(np.abs(stage_t - t)))
            sim_mask = np.zeros(dem.elevation.shape, dtype=bool)
            sim_mask[dem.valid_mask] = dem.elevation[dem.valid_mask] <= stage_v[i]
            cmap = contingency(sim_mask, obs_mask, valid)
            _write_int_asc(mdir / f"contingency_t{int(t)}_s{sub_id}.asc",
                           cmap.labels, dem.cell_size)
            csi_scores[key][str(sub_id)] = csi(cmap)
            for ck in totals:
                totals[ck] += cmap.counts[ck]
            wsr_t, wsr_v = _read_series_csv(
                run_dir / "reanalysis" / f"wsr_{sub_id}.csv")
            j = int(np.argmin(np.abs(wsr_t - t)))
            obs_wsr = float(overpasses.values[op_index, sub_id - 1])
            wsr_err[key][str(sub_id)] = abs(float(wsr_v[j]) - obs_wsr)
        denom = totals["TP"] + totals["FP"] + totals["FN"]
        csi_scores[key]["all"] = 100.0 if denom == 0 else 100.0 * totals["TP"] / denom

    leadtime = None
    lead_path = run_dir / "forecasts" / "leadtime_rmse.csv"
    if lead_path.exists():
        leadtime = {}
        with open(lead_path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for lead_s, station, value in r:
                leadtime.setdefault(station, {})[lead_s] = float(value)

    return {
        "schema_version": 1,
        "experiment": meta["experiment"],
        "mode": meta["mode"],
        "forcing_source": meta["forcing_source"],
        "rmse_m": rmse_by_station,
        "hwm_rmse_m": hwm_score,
        "csi_pct": csi_scores,
        "wsr_abs_error": wsr_err,
        "gain_pct": None,
        "leadtime_rmse_m": leadtime,
    }


def run_metrics(run_dirs) -> list[Path]:
    """Score finished runs from their artifacts; no model is re-run.

    When an open-loop run with the same forcing source is among the inputs,
    DA runs additionally get the gain over that baseline.
    """
    run_dirs = [Path(d) for d in run_dirs]
    for d in run_dirs:
        if not (d / "run_meta.json").exists():
            raise FileNotFoundError(f"{d} is not a finished run directory")
    scores = {d: _score_run(d) for d in run_dirs}
    baselines = {s["forcing_source"]: s for s in scores.values() if s["mode"] == "OL"}
    for d, s in scores.items():
        base = baselines.get(s["forcing_source"])
        if base is not None and s["mode"] != "OL":
            s["gain_pct"] = gain(s["rmse_m"], base["rmse_m"])
    paths = []
    for d, s in scores.items():
        path = d / "scores.json"
        _write_json(path, s)
        paths.append(path)

    parents = {d.parent for d in run_dirs}
    summary_dir = parents.pop() if len(parents) == 1 else run_dirs[0]
    summary = summary_dir / "summary.csv"
    with open(summary, "w", newline="") as f:
        w = csv.writer(f)
        stations = sorted(next(iter(scores.values()))["rmse_m"])
        w.writerow(["experiment"] + [f"rmse_{s}_m" for s in stations]
                   + ["gain_pct", "hwm_rmse_m"])
        for d in sorted(run_dirs):
            s = scores[d]
            row = [s["experiment"]]
            row += [_fmt(s["rmse_m"][st]) for st in stations]
            row.append("" if s["gain_pct"] is None else _fmt(s["gain_pct"]))
            row.append(_fmt(s["hwm_rmse_m"]))
            w.writerow(row)
    paths.append(summary)
    log.info("scores written for %d run(s)", len(run_dirs))
    return paths
