import numpy as np
import pytest

from floodda.control import ControlVector
from floodda.observations import (
    GaugeSeries,
    HwmSet,
    ObsBank,
    ObsErrorModel,
    ObsKind,
    ObsVector,
    OverpassSet,
    sigma_at,
    synthesize_truth_obs,
    window_slice,
)


@pytest.fixture(scope="module")
def truth_setup(flood_model):
    control = ControlVector.assemble(np.full(7, 33.0), 1.0, np.zeros(5))
    forcing = lambda t: 400.0 + 3600.0 * min(max((t - 21600.0) / 86400.0, 0.0), 1.0)
    initial = flood_model.initial_state(400.0, control.friction())
    overpasses = (43200.0, 108000.0)
    truth = flood_model.run(initial, control, forcing, (0.0, 172800.0),
                            extra_times=overpasses)
    return flood_model, truth, overpasses


@pytest.fixture(scope="module")
def bank(truth_setup):
    model, truth, overpasses = truth_setup
    return synthesize_truth_obs(truth, model, overpasses, ObsErrorModel(), seed=99)


class TestSynthesize:
    def test_zero_noise_equals_truth(self, truth_setup):
        model, truth, overpasses = truth_setup
        em = ObsErrorModel(sigma_wl=1e-300, sigma_wsr=1e-300, sigma_hwm=1e-300)
        bank = synthesize_truth_obs(truth, model, overpasses, em, seed=1)
        mid = [g for g in bank.gauges if g.station == "middle"][0]
        expect = truth.wl_series("middle")[[np.flatnonzero(np.isclose(truth.times, t))[0]
                                            for t in mid.times]]
        assert np.allclose(mid.values, expect, atol=1e-9)

    def test_same_seed_identical(self, truth_setup):
        model, truth, overpasses = truth_setup
        a = synthesize_truth_obs(truth, model, overpasses, ObsErrorModel(), seed=5)
        b = synthesize_truth_obs(truth, model, overpasses, ObsErrorModel(), seed=5)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a.gauges, b.gauges))
        assert np.array_equal(a.overpasses.values, b.overpasses.values)
        assert all(p.wl_max == q.wl_max for p, q in zip(a.hwms.points, b.hwms.points))

    def test_noise_std_monte_carlo(self, truth_setup):
        # residual std over >= 1000 samples within 10% of the configured sigma
        model, truth, overpasses = truth_setup
        em = ObsErrorModel(sigma_wl=0.05)
        residuals = []
        for seed in range(8):
            bank = synthesize_truth_obs(truth, model, overpasses, em, seed=seed)
            for g in bank.gauges:
                idx = [np.flatnonzero(np.isclose(truth.times, t))[0] for t in g.times]
                residuals.extend(g.values - truth.wl_series(g.station)[idx])
        residuals = np.asarray(residuals)
        assert residuals.size >= 1000
        assert np.std(residuals) == pytest.approx(0.05, rel=0.10)

    def test_wsr_clipped(self, truth_setup):
        model, truth, overpasses = truth_setup
        em = ObsErrorModel(sigma_wsr=0.5)
        bank = synthesize_truth_obs(truth, model, overpasses, em, seed=3)
        assert np.all(bank.overpasses.values >= 0.0)
        assert np.all(bank.overpasses.values <= 1.0)

    def test_overpass_outside_span_rejected(self, truth_setup):
        model, truth, _ = truth_setup
        with pytest.raises(ValueError, match="outside truth span"):
            synthesize_truth_obs(truth, model, (1e9,), ObsErrorModel(), seed=1)

    def test_hwm_count(self, bank):
        assert len(bank.hwms) == 178


class TestSigmaAt:
    def test_at_present(self):
        em = ObsErrorModel(alpha=1.0)
        assert sigma_at(0.05, 100.0, 100.0, 50.0, em) == pytest.approx(0.05)

    def test_window_start_doubles(self):
        em = ObsErrorModel(alpha=1.0)
        assert sigma_at(0.05, 50.0, 100.0, 50.0, em) == pytest.approx(0.10)

    def test_alpha_zero_constant(self):
        em = ObsErrorModel(alpha=0.0)
        for t in (50.0, 75.0, 100.0):
            assert sigma_at(0.05, t, 100.0, 50.0, em) == pytest.approx(0.05)

    def test_outside_window(self):
        with pytest.raises(ValueError):
            sigma_at(0.05, 0.0, 100.0, 50.0, ObsErrorModel())


class TestWindowSlice:
    def test_empty_range(self, bank):
        out = window_slice(bank, (3600.0, 3600.0), ObsErrorModel(), t0=3600.0)
        assert len(out) == 0

    def test_hourly_wl_counts(self, bank):
        out = window_slice(bank, (21600.0, 86400.0), ObsErrorModel(), t0=86400.0)
        # 18 h window => 18 hourly entries per station
        for station in ("upstream", "middle", "downstream"):
            n = sum(1 for e in out.entries
                    if e.kind is ObsKind.WL and e.ident == station)
            assert n == 18

    def test_overpass_entries(self, bank):
        out = window_slice(bank, (21600.0, 86400.0), ObsErrorModel(), t0=86400.0)
        assert out.count(ObsKind.WSR) == 5
        assert out.wsr_times() == [43200.0]

    def test_emitted_times_exist_in_native_series(self, bank):
        out = window_slice(bank, (21600.0, 86400.0), ObsErrorModel(), t0=86400.0)
        native = set(bank.gauges[0].times.tolist())
        for e in out.entries:
            if e.kind is ObsKind.WL:
                assert e.time in native

    def test_sigma_monotone_with_age(self, bank):
        out = window_slice(bank, (21600.0, 86400.0), ObsErrorModel(), t0=86400.0)
        wl = [(e.time, e.sigma) for e in out.entries if e.ident == "middle"]
        times = np.array([t for t, _ in wl])
        sigmas = np.array([s for _, s in wl])
        order = np.argsort(times)
        assert np.all(np.diff(sigmas[order]) <= 0)

    def test_entries_sorted(self, bank):
        out = window_slice(bank, (21600.0, 86400.0), ObsErrorModel(), t0=86400.0)
        keys = [(e.time, e.kind.value, str(e.ident)) for e in out.entries]
        assert keys == sorted(keys)


class TestCsvRoundTrips:
    def test_gauge(self, bank, tmp_path):
        g = bank.gauges[0]
        g.to_csv(tmp_path / "g.csv")
        back = GaugeSeries.from_csv(tmp_path / "g.csv", station=g.station)
        assert np.array_equal(back.times, g.times)
        assert np.array_equal(back.values, g.values)

    def test_overpasses(self, bank, tmp_path):
        bank.overpasses.to_csv(tmp_path / "o.csv")
        back = OverpassSet.from_csv(tmp_path / "o.csv")
        assert np.array_equal(back.times, bank.overpasses.times)
        assert np.array_equal(back.values, bank.overpasses.values)

    def test_hwm(self, bank, tmp_path):
        bank.hwms.to_csv(tmp_path / "h.csv")
        back = HwmSet.from_csv(tmp_path / "h.csv")
        assert len(back) == len(bank.hwms)
        assert back.points[0] == bank.hwms.points[0]


class TestObsVector:
    def test_wsr_bounds_enforced(self):
        from floodda.observations import ObsEntry
        with pytest.raises(ValueError):
            ObsVector([ObsEntry(ObsKind.WSR, 1, 0.0, 1.5, 0.05)])

    def test_with_values_clips_wsr(self):
        from floodda.observations import ObsEntry
        v = ObsVector([ObsEntry(ObsKind.WSR, 1, 0.0, 0.5, 0.05),
                       ObsEntry(ObsKind.WL, "a", 0.0, 10.0, 0.05)])
        # entries sort WL before WSR at equal time; values follow that order
        assert v.entries[0].kind is ObsKind.WL
        out = v.with_values([12.0, 1.7])
        by_kind = {e.kind: e.value for e in out.entries}
        assert by_kind[ObsKind.WSR] == 1.0
        assert by_kind[ObsKind.WL] == 12.0
