import copy
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from floodda.cli import main
from floodda.config import ConfigError, ExperimentConfig

BASE_DOC = {
    "schema_version": 1,
    "seed": 4242,
    "output_dir": "out",
    "mode": "IGDA",
    "forcing_source": "C",
    "strategy": "CC",
    "threads": 1,
    "geometry": {
        "n_cells": 40, "cell_length_m": 1250.0,
        "segment_bounds": [0, 7, 14, 20, 27, 34, 40],
        "stations": {"upstream": 2, "middle": 20, "downstream": 37},
    },
    "subdomains": [
        {"id": 1, "first_cell": 8, "last_cell": 11,
         "dem": {"n_rows": 12, "n_cols": 12, "seed": 1}},
        {"id": 2, "first_cell": 13, "last_cell": 16,
         "dem": {"n_rows": 12, "n_cols": 12, "seed": 2}},
        {"id": 3, "first_cell": 18, "last_cell": 22,
         "dem": {"n_rows": 12, "n_cols": 12, "seed": 3}},
        {"id": 4, "first_cell": 24, "last_cell": 28,
         "dem": {"n_rows": 12, "n_cols": 12, "seed": 4}},
        {"id": 5, "first_cell": 30, "last_cell": 34,
         "dem": {"n_rows": 12, "n_cols": 12, "seed": 5}},
    ],
    "priors": {"ks_mean": 30.0, "ks_std": 5.0, "mu_mean": 1.0, "mu_std": 0.25,
               "dh_std": 0.4},
    "truth": {"ks": [30.0, 33.0, 29.0, 31.0, 30.0, 28.0, 32.0], "mu": 1.0},
    "forcing": {
        "base_m3s": 400.0, "peak_m3s": 4200.0, "t_peak_s": 172800.0,
        "rise_duration_s": 115200.0, "duration_s": 345600.0,
        "bias": {"amplitude": 0.7, "shift_s": 0.0},
    },
    "schedule": {"t0_first_s": 75600.0, "n_cycles": 3,
                 "forecast_horizon_s": 43200.0},
    "observations": {"overpass_times_s": [93600.0, 144000.0], "hwm_count": 24},
    "ensemble": {"n_members": 6},
    "forecast": {"issue_cycles": [2],
                 "lead_times_s": [0.0, 21600.0, 43200.0]},
}


def write_config(tmp_path, **changes):
    doc = copy.deepcopy(BASE_DOC)
    for key, value in changes.items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def tree_digest(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """truth + OL/IGDA runs + metrics, produced once through the CLI."""
    tmp = tmp_path_factory.mktemp("ws")
    cfg = write_config(tmp)
    assert main(["truth", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "OL"]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "IGDA"]) == 0
    out = tmp / "out"
    assert main(["metrics", str(out / "runs" / "OL_C"),
                 str(out / "runs" / "IGDA_C")]) == 0
    return tmp, cfg


class TestTruth:
    def test_same_seed_byte_identical(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        cfg_a = write_config(tmp_path / "a")
        cfg_b = write_config(tmp_path / "b")
        assert main(["truth", "--config", str(cfg_a)]) == 0
        assert main(["truth", "--config", str(cfg_b)]) == 0
        da = tree_digest(tmp_path / "a" / "out" / "truth")
        db = tree_digest(tmp_path / "b" / "out" / "truth")
        assert da == db

    def test_peak_read_back(self, workspace):
        tmp, _ = workspace
        meta = json.loads((tmp / "out" / "truth" / "truth_meta.json").read_text())
        assert meta["observed_peak_m3s"] == pytest.approx(4200.0)
        from floodda.forcing import Hydrograph
        h = Hydrograph.from_csv(tmp / "out" / "truth" / "hydrograph_observed.csv")
        assert h.peak()[1] == pytest.approx(4200.0)

    def test_missing_dem_path_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path)
        doc = json.loads(cfg.read_text())
        doc["subdomains"][0]["dem"] = {"path": "nowhere/missing.asc"}
        cfg.write_text(json.dumps(doc))
        assert main(["truth", "--config", str(cfg)]) == 2
        with pytest.raises(ConfigError, match="dem.path"):
            ExperimentConfig.from_json(cfg)


class TestRun:
    def test_ol_diagnostics_show_prior_means(self, workspace):
        tmp, _ = workspace
        import csv as csvmod
        with open(tmp / "out" / "runs" / "OL_C" / "cycles" / "c0000" / "analysis.csv") as f:
            rows = list(csvmod.DictReader(f))
        by_name = {r["element"]: float(r["analysis_mean"]) for r in rows}
        assert by_name["mu"] == 1.0
        assert by_name["ks3"] == 30.0

    def test_run_without_truth_is_missing_input(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["run", "--config", str(cfg)]) == 4

    def test_ida_igda_differ_only_in_wsr_counts(self, workspace, tmp_path):
        tmp, cfg = workspace
        assert main(["run", "--config", str(cfg), "--mode", "IDA"]) == 0
        runs = tmp / "out" / "runs"
        for c in range(3):
            ida = json.loads((runs / "IDA_C" / "cycles" / f"c{c:04d}" /
                              "cycle_meta.json").read_text())
            igda = json.loads((runs / "IGDA_C" / "cycles" / f"c{c:04d}" /
                               "cycle_meta.json").read_text())
            assert ida["n_obs_wl"] == igda["n_obs_wl"]
            assert ida["n_obs_wsr"] == 0
            assert igda["n_obs_wsr"] in (0, 5)
        total_wsr = sum(
            json.loads((runs / "IGDA_C" / "cycles" / f"c{c:04d}" /
                        "cycle_meta.json").read_text())["n_obs_wsr"]
            for c in range(3))
        assert total_wsr > 0

    def test_restart_files_round_trip(self, workspace):
        tmp, _ = workspace
        from floodda.state import load_states
        states = load_states(tmp / "out" / "runs" / "IGDA_C" / "cycles" /
                             "c0001" / "restart.bin")
        assert len(states) == 6
        for s in states:
            assert np.all(s.depth >= 0)


class TestMetrics:
    def test_scores_exist_with_gain(self, workspace):
        tmp, _ = workspace
        scores = json.loads((tmp / "out" / "runs" / "IGDA_C" / "scores.json").read_text())
        assert set(scores["rmse_m"]) == {"upstream", "middle", "downstream"}
        assert scores["gain_pct"] is not None
        ol = json.loads((tmp / "out" / "runs" / "OL_C" / "scores.json").read_text())
        assert ol["gain_pct"] is None

    def test_reinvocation_byte_identical(self, workspace):
        tmp, _ = workspace
        out = tmp / "out"
        target = out / "runs" / "IGDA_C" / "scores.json"
        before = target.read_bytes()
        assert main(["metrics", str(out / "runs" / "OL_C"),
                     str(out / "runs" / "IGDA_C")]) == 0
        assert target.read_bytes() == before

    def test_summary_one_row_per_experiment(self, workspace):
        tmp, _ = workspace
        lines = (tmp / "out" / "runs" / "summary.csv").read_text().strip().splitlines()
        experiments = [l.split(",")[0] for l in lines[1:]]
        assert sorted(experiments) == sorted(set(experiments))
        assert "OL_C" in experiments and "IGDA_C" in experiments

    def test_gain_recomputable_from_rmse_columns(self, workspace):
        tmp, _ = workspace
        from floodda.metrics import gain as gain_fn
        igda = json.loads((tmp / "out" / "runs" / "IGDA_C" / "scores.json").read_text())
        ol = json.loads((tmp / "out" / "runs" / "OL_C" / "scores.json").read_text())
        assert igda["gain_pct"] == pytest.approx(gain_fn(igda["rmse_m"], ol["rmse_m"]))

    def test_metrics_on_non_run_dir(self, tmp_path):
        assert main(["metrics", str(tmp_path)]) == 4


class TestForecastCmd:
    def test_forecast_outputs(self, workspace):
        tmp, cfg = workspace
        assert main(["forecast", "--config", str(cfg), "--strategy", "CC"]) == 0
        fdir = tmp / "out" / "runs" / "IGDA_C_CC" / "forecasts"
        issues = sorted(fdir.glob("issue_*"))
        assert len(issues) == 1
        issue = issues[0]
        assert (issue / "member000.csv").exists()
        assert (issue / "mean_middle.csv").exists()
        lead_table = (fdir / "leadtime_rmse.csv").read_text().splitlines()
        assert lead_table[0] == "lead_s,station,rmse_m"
        leads = {int(l.split(",")[0]) for l in lead_table[1:]}
        assert leads == {0, 21600, 43200}

    def test_vq_forecast_forcing_constant(self, workspace):
        tmp, cfg = workspace
        assert main(["forecast", "--config", str(cfg), "--mode", "IGDA",
                     "--forcing", "V", "--strategy", "VQ"]) == 0
        issue = sorted((tmp / "out" / "runs" / "IGDA_V_VQ" / "forecasts").glob("issue_*"))[0]
        from floodda.experiment import _read_series_csv
        _, q = _read_series_csv(issue / "forcing_forecast.csv")
        assert np.all(q == q[0])

    def test_cc_vs_vc_forcing_logs(self, workspace):
        tmp, cfg = workspace
        assert main(["forecast", "--config", str(cfg), "--mode", "IGDA",
                     "--forcing", "V", "--strategy", "VC"]) == 0
        from floodda.experiment import _read_series_csv
        cc_issue = sorted((tmp / "out" / "runs" / "IGDA_C_CC" / "forecasts").glob("issue_*"))[0]
        vc_issue = sorted((tmp / "out" / "runs" / "IGDA_V_VC" / "forecasts").glob("issue_*"))[0]
        # forecast-phase forcings agree (both use the biased source after T0)
        assert filecmp.cmp(cc_issue / "forcing_forecast.csv",
                           vc_issue / "forcing_forecast.csv", shallow=False)
        # reanalysis-phase forcings differ
        _, q_cc = _read_series_csv(cc_issue / "forcing_reanalysis.csv")
        _, q_vc = _read_series_csv(vc_issue / "forcing_reanalysis.csv")
        assert not np.array_equal(q_cc, q_vc)

    def test_strategy_source_mismatch_is_config_error(self, workspace):
        _, cfg = workspace
        assert main(["forecast", "--config", str(cfg), "--forcing", "V",
                     "--strategy", "CC"]) == 2


def test_threads_give_identical_scores(tmp_path):
    cfg = write_config(tmp_path, **{"ensemble.n_members": 4,
                                    "schedule.n_cycles": 2,
                                    "forecast.issue_cycles": [1]})
    assert main(["truth", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--threads", "1"]) == 0
    d1 = (out / "runs" / "IGDA_C").rename(out / "runs" / "IGDA_C_t1")
    assert main(["run", "--config", str(cfg), "--threads", "8"]) == 0
    d8 = out / "runs" / "IGDA_C"
    assert main(["metrics", str(d1)]) == 0
    assert main(["metrics", str(d8)]) == 0
    # run_meta still carries the same experiment label, so scores.json must
    # agree byte for byte
    assert (d1 / "scores.json").read_bytes() == (d8 / "scores.json").read_bytes()
