import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodda.metrics import (
    FN,
    FP,
    NODATA_CODE,
    TN,
    TP,
    ContingencyMap,
    contingency,
    csi,
    gain,
    hwm_rmse,
    rmse,
)
from floodda.observations import HwmPoint, HwmSet


class TestRmse:
    def test_identical_series(self):
        t = np.arange(10.0)
        assert rmse(t, t * 0 + 5, t, t * 0 + 5) == 0.0

    def test_constant_offset(self):
        t = np.arange(10.0)
        assert rmse(t, np.full(10, 5.2), t, np.full(10, 5.0)) == pytest.approx(0.2)

    def test_hand_computed(self):
        # differences (0.1, -0.1, 0.2, -0.2) -> sqrt(0.025)
        t = np.arange(4.0)
        sim = np.array([1.1, 0.9, 1.2, 0.8])
        obs = np.ones(4)
        assert rmse(t, sim, t, obs) == pytest.approx(np.sqrt(0.025))
        assert rmse(t, sim, t, obs) == pytest.approx(0.158113883, abs=1e-9)

    def test_nearest_pairing_within_tolerance(self):
        sim_t = np.array([0.0, 900.0, 1800.0])
        sim_v = np.array([1.0, 2.0, 3.0])
        obs_t = np.array([880.0])
        assert rmse(sim_t, sim_v, obs_t, np.array([2.5])) == pytest.approx(0.5)

    def test_no_overlap_errors(self):
        with pytest.raises(ValueError, match="overlap"):
            rmse(np.array([0.0, 900.0]), np.zeros(2), np.array([1e6]), np.zeros(1))

    def test_symmetric_in_sign(self):
        t = np.arange(5.0)
        a = np.array([1.0, 2.0, 1.5, 0.5, 1.0])
        b = np.array([0.8, 2.2, 1.4, 0.9, 1.1])
        assert rmse(t, a, t, b) == pytest.approx(rmse(t, b, t, a))


class TestGain:
    def test_table_anchor_values(self):
        # reported per-station RMSEs reproduce the published gain column
        ol_v = {"a": 0.106, "b": 0.392, "c": 0.536}
        ol_c = {"a": 1.209, "b": 1.405, "c": 1.598}
        cases = [
            ({"a": 0.062, "b": 0.071, "c": 0.081}, ol_v, 69.43),
            ({"a": 0.073, "b": 0.074, "c": 0.090}, ol_v, 65.15),
            ({"a": 0.160, "b": 0.148, "c": 0.130}, ol_c, 89.37),
            ({"a": 0.166, "b": 0.160, "c": 0.141}, ol_c, 88.69),
        ]
        for da, ol, expect in cases:
            assert gain(da, ol) == pytest.approx(expect, abs=0.01)

    def test_no_improvement(self):
        ol = {"a": 0.5, "b": 0.4}
        assert gain(ol, ol) == pytest.approx(0.0)

    def test_zero_ol_rejected(self):
        with pytest.raises(ValueError):
            gain({"a": 0.1}, {"a": 0.0})

    def test_station_mismatch(self):
        with pytest.raises(ValueError):
            gain({"a": 0.1}, {"b": 0.2})


def build_10x10():
    """23 TP / 5 FP / 12 FN / 60 TN on a 10x10 raster."""
    sim = np.zeros((10, 10), dtype=bool)
    obs = np.zeros((10, 10), dtype=bool)
    flat_sim = sim.ravel()
    flat_obs = obs.ravel()
    flat_sim[:23] = True          # TP
    flat_obs[:23] = True
    flat_sim[23:28] = True        # FP
    flat_obs[28:40] = True        # FN
    return sim, obs


class TestContingency:
    def test_hand_built_counts(self):
        sim, obs = build_10x10()
        cmap = contingency(sim, obs)
        assert cmap.counts == {"TP": 23, "FP": 5, "FN": 12, "TN": 60}

    def test_identical_masks(self):
        sim, _ = build_10x10()
        cmap = contingency(sim, sim)
        assert cmap.counts["FP"] == 0 and cmap.counts["FN"] == 0

    def test_all_fn(self):
        obs = np.ones((4, 4), dtype=bool)
        cmap = contingency(np.zeros((4, 4), dtype=bool), obs)
        assert cmap.counts == {"TP": 0, "TN": 0, "FP": 0, "FN": 16}

    def test_counts_partition_valid_pixels(self):
        rng = np.random.default_rng(5)
        sim = rng.random((20, 20)) > 0.5
        obs = rng.random((20, 20)) > 0.6
        valid = rng.random((20, 20)) > 0.1
        cmap = contingency(sim, obs, valid)
        assert sum(cmap.counts.values()) == int(valid.sum()) == cmap.n_valid

    def test_nodata_code(self):
        sim = np.array([[True, False]])
        obs = np.array([[True, True]])
        valid = np.array([[True, False]])
        cmap = contingency(sim, obs, valid)
        assert cmap.labels[0, 1] == NODATA_CODE
        assert cmap.labels[0, 0] == TP

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            contingency(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


class TestCsi:
    def test_hand_built(self):
        sim, obs = build_10x10()
        assert csi(contingency(sim, obs)) == pytest.approx(57.5)

    def test_perfect_match(self):
        sim, _ = build_10x10()
        assert csi(contingency(sim, sim)) == pytest.approx(100.0)

    def test_zero_tp(self):
        sim = np.zeros((3, 3), dtype=bool)
        obs = np.zeros((3, 3), dtype=bool)
        obs[0, 0] = True
        assert csi(contingency(sim, obs)) == 0.0

    def test_degenerate_dry(self):
        cmap = contingency(np.zeros((3, 3), dtype=bool), np.zeros((3, 3), dtype=bool))
        assert cmap.degenerate
        assert csi(cmap) == 100.0

    def test_invariant_under_nodata_relabeling(self):
        sim, obs = build_10x10()
        valid = np.ones((10, 10), dtype=bool)
        valid[9, 9] = False       # drop one TN pixel
        a = csi(contingency(sim, obs))
        b = csi(contingency(sim, obs, valid))
        assert a == b


class TestHwm:
    def test_exact_match(self):
        hwms = HwmSet([HwmPoint("p0", "station", "a", 10.0),
                       HwmPoint("p1", "subdomain", 1, 30.0)])
        sim = {("station", "a"): 10.0, ("subdomain", 1): 30.0}
        assert hwm_rmse(sim, hwms) == 0.0

    def test_uniform_offset(self):
        hwms = HwmSet([HwmPoint("p0", "station", "a", 10.0),
                       HwmPoint("p1", "station", "b", 12.0)])
        sim = {("station", "a"): 10.5, ("station", "b"): 12.5}
        assert hwm_rmse(sim, hwms) == pytest.approx(0.5)

    def test_hand_computed_mixed(self):
        hwms = HwmSet([HwmPoint("p0", "station", "a", 10.0),
                       HwmPoint("p1", "station", "b", 12.0)])
        sim = {("station", "a"): 10.3, ("station", "b"): 11.6}
        assert hwm_rmse(sim, hwms) == pytest.approx(np.sqrt(0.125))

    def test_unmapped_point(self):
        hwms = HwmSet([HwmPoint("p0", "station", "zzz", 10.0)])
        with pytest.raises(KeyError):
            hwm_rmse({}, hwms)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_rmse_zero_iff_identical_pairs(seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1000, 12))
    t = np.unique(t)
    v = rng.uniform(0, 5, t.size)
    assert rmse(t, v, t, v) == 0.0
    bumped = v.copy()
    bumped[0] += 0.5
    assert rmse(t, bumped, t, v) > 0.0
