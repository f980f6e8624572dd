"""DEM rasters: ESRI ASCII grid I/O, hypsometric curves, synthetic terrain."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .rng import DEM, substream

DEFAULT_NODATA = -9999.0


@dataclass
class DemRaster:
    """Elevation raster. Nodata pixels are stored as NaN internally.

    Parameters
    ----------
    elevation : (n_rows, n_cols) float64 array, NaN where nodata.
    cell_size : pixel edge length in metres.
    origin : (x, y) of the lower-left corner in metres.
    nodata : sentinel written to / read from .asc files.
    """

    elevation: np.ndarray
    cell_size: float = 30.0
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float = DEFAULT_NODATA

    def __post_init__(self) -> None:
        self.elevation = np.asarray(self.elevation, dtype=np.float64)
        if self.elevation.ndim != 2:
            raise ValueError("elevation must be a 2-D array")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        valid = np.isfinite(self.elevation)
        if not valid.any():
            raise ValueError("raster has no valid pixel")
        # inf is not an admissible elevation; only NaN marks nodata
        if np.isinf(self.elevation).any():
            raise ValueError("non-nodata elevations must be finite")

    @property
    def n_rows(self) -> int:
        return self.elevation.shape[0]

    @property
    def n_cols(self) -> int:
        return self.elevation.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.elevation)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    @property
    def min_elevation(self) -> float:
        return float(np.nanmin(self.elevation))

    @property
    def max_elevation(self) -> float:
        return float(np.nanmax(self.elevation))


def write_asc(dem: DemRaster, path_or_file) -> None:
    """Write a raster as an ESRI ASCII grid (.asc)."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w") if own else path_or_file
    try:
        f.write(f"ncols {dem.n_cols}\n")
        f.write(f"nrows {dem.n_rows}\n")
        f.write(f"xllcorner {dem.origin[0]!r}\n")
        f.write(f"yllcorner {dem.origin[1]!r}\n")
        f.write(f"cellsize {dem.cell_size!r}\n")
        f.write(f"NODATA_value {dem.nodata!r}\n")
        for row in dem.elevation:
            vals = np.where(np.isfinite(row), row, dem.nodata)
            f.write(" ".join(repr(float(v)) for v in vals))
            f.write("\n")
    finally:
        if own:
            f.close()


def read_asc(path_or_file) -> DemRaster:
    """Read an ESRI ASCII grid (.asc) into a :class:`DemRaster`."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "r") if own else path_or_file
    try:
        header: dict[str, float] = {}
        lines = f.read().splitlines()
    finally:
        if own:
            f.close()
    idx = 0
    header_keys = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"}
    while idx < len(lines):
        parts = lines[idx].split()
        if len(parts) == 2 and parts[0].lower() in header_keys:
            header[parts[0].lower()] = float(parts[1])
            idx += 1
        else:
            break
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise ValueError(f"missing required .asc header field: {key}")
    n_cols = int(header["ncols"])
    n_rows = int(header["nrows"])
    nodata = header.get("nodata_value", DEFAULT_NODATA)
    body = " ".join(lines[idx:])
    values = np.loadtxt(io.StringIO(body), dtype=np.float64).reshape(n_rows, n_cols)
    elevation = np.where(values == nodata, np.nan, values)
    return DemRaster(
        elevation=elevation,
        cell_size=header["cellsize"],
        origin=(header.get("xllcorner", 0.0), header.get("yllcorner", 0.0)),
        nodata=nodata,
    )


def synthetic_dem(
    n_rows: int,
    n_cols: int,
    cell_size: float,
    floor: float,
    relief: float,
    seed: int,
    origin: tuple[float, float] = (0.0, 0.0),
    nodata_fraction: float = 0.0,
) -> DemRaster:
    """Generate a gently undulating terrain patch.

    Elevations span exactly [floor, floor + relief]: a cross-valley gradient
    plus low-frequency undulation and seeded jitter, rescaled so the minimum
    sits at ``floor``.
    """
    if relief <= 0:
        raise ValueError("relief must be positive")
    rng = substream(seed, DEM, n_rows, n_cols)
    r = np.linspace(0.0, 1.0, n_rows)[:, None]
    c = np.linspace(0.0, 1.0, n_cols)[None, :]
    base = 0.6 * (0.7 * r + 0.3 * c)
    waves = 0.25 * (0.5 + 0.5 * np.sin(2.3 * np.pi * r + 1.1) * np.cos(1.7 * np.pi * c))
    jitter = 0.15 * rng.random((n_rows, n_cols))
    z = base + waves + jitter
    z = (z - z.min()) / (z.max() - z.min())
    elevation = floor + relief * z
    if nodata_fraction > 0:
        n_pix = n_rows * n_cols
        n_drop = int(round(nodata_fraction * n_pix))
        n_drop = min(n_drop, n_pix - 1)
        if n_drop > 0:
            drop = rng.choice(n_pix, size=n_drop, replace=False)
            flat = elevation.ravel()
            flat[drop] = np.nan
            elevation = flat.reshape(n_rows, n_cols)
    return DemRaster(elevation=elevation, cell_size=cell_size, origin=origin)


@dataclass
class Hypsometry:
    """Stage/volume curve of a raster, exact and piecewise linear.

    Built from the sorted valid pixel elevations; volume at stage eta is
    pixel_area * sum(max(eta - z_i, 0)).  ``stage`` is the exact inverse of
    ``volume`` (up to float roundoff) by construction.
    """

    zs: np.ndarray = field(repr=False)
    pixel_area: float
    prefix: np.ndarray = field(repr=False)
    knot_volume: np.ndarray = field(repr=False)

    @classmethod
    def from_dem(cls, dem: DemRaster) -> "Hypsometry":
        zs = np.sort(dem.elevation[dem.valid_mask].astype(np.float64))
        area = float(dem.cell_size) ** 2
        prefix = np.concatenate(([0.0], np.cumsum(zs)))
        counts = np.arange(1, zs.size + 1, dtype=np.float64)
        knot_volume = area * (counts * zs - prefix[1:])
        return cls(zs=zs, pixel_area=area, prefix=prefix, knot_volume=knot_volume)

    @property
    def floor(self) -> float:
        return float(self.zs[0])

    @property
    def top(self) -> float:
        return float(self.zs[-1])

    def volume(self, stage: float) -> float:
        """Water volume stored below surface elevation ``stage``."""
        if stage <= self.zs[0]:
            return 0.0
        k = int(np.searchsorted(self.zs, stage, side="right"))
        return self.pixel_area * (k * stage - self.prefix[k])

    def stage(self, volume: float) -> float:
        """Surface elevation holding ``volume``; the inverse of :meth:`volume`."""
        if volume <= 0.0:
            return self.floor
        # first knot with stored volume >= volume; the surface then lies in
        # (zs[k-1], zs[k]] and exactly k pixels are wet
        k = int(np.searchsorted(self.knot_volume, volume, side="left"))
        k = min(max(k, 1), self.zs.size)
        return (volume / self.pixel_area + self.prefix[k]) / k

    def wet_count(self, stage: float) -> int:
        """Number of valid pixels with elevation <= stage."""
        return int(np.searchsorted(self.zs, stage, side="right"))
