import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodda.raster import DemRaster, Hypsometry, read_asc, synthetic_dem, write_asc


def test_asc_round_trip(tmp_path):
    elev = np.arange(12, dtype=float).reshape(3, 4) + 0.125
    elev[1, 2] = np.nan
    dem = DemRaster(elevation=elev, cell_size=25.0, origin=(300.0, -40.0))
    path = tmp_path / "d.asc"
    write_asc(dem, path)
    back = read_asc(path)
    assert back.n_rows == 3 and back.n_cols == 4
    assert back.cell_size == 25.0
    assert back.origin == (300.0, -40.0)
    assert np.isnan(back.elevation[1, 2])
    mask = dem.valid_mask
    assert np.array_equal(back.elevation[mask], dem.elevation[mask])


def test_asc_header_required():
    with pytest.raises(ValueError, match="ncols"):
        read_asc(io.StringIO("nrows 2\ncellsize 1\n0 1\n2 3\n"))


def test_raster_requires_valid_pixel():
    with pytest.raises(ValueError, match="no valid pixel"):
        DemRaster(elevation=np.full((2, 2), np.nan))


def test_synthetic_dem_span_and_determinism():
    a = synthetic_dem(20, 25, 30.0, floor=10.0, relief=4.0, seed=7)
    b = synthetic_dem(20, 25, 30.0, floor=10.0, relief=4.0, seed=7)
    assert np.array_equal(a.elevation, b.elevation)
    assert a.min_elevation == pytest.approx(10.0)
    assert a.max_elevation == pytest.approx(14.0)
    c = synthetic_dem(20, 25, 30.0, floor=10.0, relief=4.0, seed=8)
    assert not np.array_equal(a.elevation, c.elevation)


def test_synthetic_dem_nodata_fraction():
    dem = synthetic_dem(20, 20, 30.0, floor=0.0, relief=2.0, seed=3, nodata_fraction=0.1)
    assert dem.n_valid == 400 - 40


def test_hypsometry_floor_and_monotonicity():
    dem = synthetic_dem(15, 15, 30.0, floor=5.0, relief=3.0, seed=1)
    hyp = Hypsometry.from_dem(dem)
    assert hyp.volume(hyp.floor) == 0.0
    assert hyp.stage(0.0) == hyp.floor
    stages = np.linspace(5.0, 9.5, 200)
    vols = np.array([hyp.volume(s) for s in stages])
    assert np.all(np.diff(vols) >= 0)


def test_hypsometry_exact_above_top():
    # one pixel at 0, one at 1: above the top the curve is linear in both pixels
    dem = DemRaster(elevation=np.array([[0.0, 1.0]]), cell_size=2.0)
    hyp = Hypsometry.from_dem(dem)
    # stage 3: pixel volumes (3-0)*4 + (3-1)*4 = 20
    assert hyp.volume(3.0) == pytest.approx(20.0)
    assert hyp.stage(20.0) == pytest.approx(3.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e7))
def test_hypsometry_volume_stage_round_trip(volume):
    dem = synthetic_dem(12, 12, 30.0, floor=2.0, relief=5.0, seed=4)
    hyp = Hypsometry.from_dem(dem)
    stage = hyp.stage(volume)
    assert hyp.volume(stage) == pytest.approx(volume, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=2.0, max_value=12.0))
def test_hypsometry_stage_volume_round_trip(stage):
    dem = synthetic_dem(12, 12, 30.0, floor=2.0, relief=5.0, seed=4)
    hyp = Hypsometry.from_dem(dem)
    vol = hyp.volume(stage)
    if vol > 0:
        assert hyp.stage(vol) == pytest.approx(stage, rel=1e-12)


def test_wet_count_matches_threshold_count():
    dem = synthetic_dem(10, 10, 30.0, floor=0.0, relief=2.0, seed=2)
    hyp = Hypsometry.from_dem(dem)
    for stage in (0.0, 0.5, 1.0, 1.7, 2.5):
        expect = int(np.sum(dem.elevation[dem.valid_mask] <= stage))
        assert hyp.wet_count(stage) == expect
