"""Channel geometry, friction field, and floodplain storage subdomains."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import DemRaster, Hypsometry

KS_MIN = 5.0
KS_MAX = 80.0


@dataclass(frozen=True)
class FrictionField:
    """Strickler coefficients: index 0 is the floodplain, 1..6 the riverbed segments."""

    ks: np.ndarray

    def __post_init__(self) -> None:
        ks = np.asarray(self.ks, dtype=np.float64)
        if ks.shape != (7,):
            raise ValueError("friction field needs exactly 7 coefficients")
        if np.any(ks < KS_MIN) or np.any(ks > KS_MAX):
            raise ValueError(f"Strickler coefficients must lie in [{KS_MIN}, {KS_MAX}]")
        object.__setattr__(self, "ks", ks)

    @classmethod
    def uniform(cls, value: float) -> "FrictionField":
        return cls(np.full(7, float(value)))


@dataclass
class ReachGeometry:
    """A 1-D river reach discretised into equal-length cells.

    ``friction_segment_id`` maps each cell to one of the riverbed segments
    1..6; segments must be contiguous runs covering every cell.
    """

    n_cells: int
    cell_length: float
    bed_elevation: np.ndarray
    channel_width: np.ndarray
    friction_segment_id: np.ndarray
    station_cells: dict[str, int]

    def __post_init__(self) -> None:
        self.bed_elevation = np.asarray(self.bed_elevation, dtype=np.float64)
        self.channel_width = np.asarray(self.channel_width, dtype=np.float64)
        self.friction_segment_id = np.asarray(self.friction_segment_id, dtype=np.int64)
        if self.n_cells < 2:
            raise ValueError("need at least 2 cells")
        if self.cell_length <= 0:
            raise ValueError("cell_length must be positive")
        for name, arr in (
            ("bed_elevation", self.bed_elevation),
            ("channel_width", self.channel_width),
            ("friction_segment_id", self.friction_segment_id),
        ):
            if arr.shape != (self.n_cells,):
                raise ValueError(f"{name} must have shape ({self.n_cells},)")
        if np.any(np.diff(self.bed_elevation) >= 0):
            raise ValueError("bed elevation must be strictly decreasing downstream")
        if np.any(self.channel_width <= 0):
            raise ValueError("channel width must be positive")
        ids = self.friction_segment_id
        if ids.min() < 1 or ids.max() > 6:
            raise ValueError("friction segment ids must lie in 1..6")
        if np.any(np.diff(ids) < 0):
            raise ValueError("friction segments must be contiguous runs")
        for name, cell in self.station_cells.items():
            if not 0 <= cell < self.n_cells:
                raise ValueError(f"station {name!r} cell {cell} out of range")

    @property
    def reach_length(self) -> float:
        return self.n_cells * self.cell_length

    @property
    def bed_slope(self) -> np.ndarray:
        """Per-cell local bed slope (positive downhill); last cell reuses its upstream value."""
        s = -np.diff(self.bed_elevation) / self.cell_length
        return np.concatenate((s, s[-1:]))

    @classmethod
    def build(
        cls,
        n_cells: int = 100,
        cell_length: float = 500.0,
        bed_slope: float = 5e-4,
        upstream_bed_elevation: float = 40.0,
        channel_width: float = 150.0,
        segment_bounds: tuple[int, ...] = (0, 16, 33, 50, 67, 84, 100),
        stations: dict[str, int] | None = None,
    ) -> "ReachGeometry":
        """Assemble the default uniform-slope reach."""
        if len(segment_bounds) != 7 or segment_bounds[0] != 0 or segment_bounds[-1] != n_cells:
            raise ValueError("segment_bounds must be 7 ascending ints from 0 to n_cells")
        if any(nxt <= cur for cur, nxt in zip(segment_bounds, segment_bounds[1:])):
            raise ValueError("segment_bounds must be strictly increasing")
        bed = upstream_bed_elevation - bed_slope * cell_length * np.arange(n_cells, dtype=np.float64)
        ids = np.empty(n_cells, dtype=np.int64)
        for seg in range(6):
            ids[segment_bounds[seg] : segment_bounds[seg + 1]] = seg + 1
        if stations is None:
            stations = {"upstream": 2, "middle": n_cells // 2, "downstream": n_cells - 5}
        return cls(
            n_cells=n_cells,
            cell_length=cell_length,
            bed_elevation=bed,
            channel_width=np.full(n_cells, float(channel_width)),
            friction_segment_id=ids,
            station_cells=dict(stations),
        )


@dataclass
class FloodplainSubdomain:
    """A floodplain storage cell coupled to a contiguous channel reach by a weir.

    ``weir_length`` defaults to 20% of the attached reach length.  The
    hypsometric curve of the DEM converts stage to stored volume exactly.
    """

    id: int
    first_cell: int
    last_cell: int
    crest_elevation: float
    dem: DemRaster
    weir_length: float | None = None
    hypsometry: Hypsometry = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.id <= 5:
            raise ValueError("subdomain id must lie in 1..5")
        if self.last_cell < self.first_cell:
            raise ValueError("attached cell range is empty")
        self.hypsometry = Hypsometry.from_dem(self.dem)

    @property
    def n_attached(self) -> int:
        return self.last_cell - self.first_cell + 1

    @property
    def floor(self) -> float:
        return self.hypsometry.floor

    def attached_cells(self) -> np.ndarray:
        return np.arange(self.first_cell, self.last_cell + 1)

    def resolved_weir_length(self, geometry: ReachGeometry) -> float:
        if self.weir_length is not None:
            return float(self.weir_length)
        return 0.2 * self.n_attached * geometry.cell_length

    def validate_against(self, geometry: ReachGeometry) -> None:
        if self.last_cell >= geometry.n_cells:
            raise ValueError(f"subdomain {self.id} attached cells exceed reach")
        bed_max = float(geometry.bed_elevation[self.first_cell : self.last_cell + 1].max())
        if self.crest_elevation < bed_max:
            raise ValueError(
                f"subdomain {self.id} crest {self.crest_elevation} below attached bed {bed_max}"
            )
