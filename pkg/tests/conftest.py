import numpy as np
import pytest

from floodda.geometry import FloodplainSubdomain, FrictionField, ReachGeometry
from floodda.raster import synthetic_dem
from floodda.solver import RiverModel


def build_model(n_cells=50, cell_length=1000.0, bank_height=5.0, dem_shape=(24, 24),
                dem_cell=30.0, relief=6.0, floor_below_crest=2.0):
    """A reach with five weir-coupled floodplain subdomains, desk-scale."""
    bounds = tuple(int(round(b * n_cells / 100)) for b in (0, 16, 33, 50, 67, 84, 100))
    geom = ReachGeometry.build(
        n_cells=n_cells,
        cell_length=cell_length,
        segment_bounds=bounds,
        stations={"upstream": 2, "middle": n_cells // 2, "downstream": n_cells - 3},
    )
    fractions = [(0.18, 0.29), (0.30, 0.41), (0.45, 0.56), (0.60, 0.71), (0.75, 0.86)]
    subs = []
    for i, (a, b) in enumerate(fractions):
        first, last = int(a * n_cells), int(b * n_cells)
        crest = float(geom.bed_elevation[first:last + 1].max()) + bank_height
        dem = synthetic_dem(dem_shape[0], dem_shape[1], dem_cell,
                            floor=crest - floor_below_crest, relief=relief, seed=i + 1)
        subs.append(FloodplainSubdomain(id=i + 1, first_cell=first, last_cell=last,
                                        crest_elevation=crest, dem=dem))
    return RiverModel(geom, subs)


@pytest.fixture(scope="session")
def channel_model():
    """Plain channel, no subdomains, default paper-scale discretisation."""
    return RiverModel(ReachGeometry.build())


@pytest.fixture(scope="session")
def flood_model():
    """Channel plus five floodplain subdomains, desk-scale discretisation."""
    return build_model()


@pytest.fixture
def friction33():
    return FrictionField.uniform(33.0)


def normal_depth(q, ks, width=150.0, slope=5e-4):
    return (q / (ks * width * np.sqrt(slope))) ** 0.6
