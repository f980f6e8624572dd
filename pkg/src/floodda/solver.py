"""Surrogate hydrodynamic model.

A mass-conservative 1-D diffusive-wave channel with Strickler friction,
coupled by broad-crested weirs to floodplain storage subdomains whose
stage/volume relation comes from DEM hypsometry.  Explicit integration with
adaptive sub-stepping; everything is a pure function of its inputs, so
ensemble members can be evaluated concurrently.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is declared as a dependency
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


from .control import ControlVector
from .geometry import FloodplainSubdomain, FrictionField, ReachGeometry
from .state import HydroState

log = logging.getLogger(__name__)

FIVE_THIRDS = 5.0 / 3.0

_STATUS_OK = 0
_STATUS_NONFINITE = 1
_STATUS_MAX_SUBSTEPS = 2


class SolverError(RuntimeError):
    """Integration failure (divergence, sub-step explosion)."""


class NonFiniteStateError(SolverError):
    def __init__(self, cell: int):
        super().__init__(f"non-finite state at cell {cell}")
        self.cell = cell


@dataclass(frozen=True)
class SolverOptions:
    """Numerical settings for the explicit integrator."""

    output_interval: float = 900.0
    weir_coefficient: float = 1.7
    slope_eps: float = 1e-6
    courant: float = 0.9
    depth_change_frac: float = 0.05
    depth_change_floor: float = 1e-3
    dt_max: float = 900.0
    max_substeps_per_step: int = 2_000_000
    downstream_open: bool = True


@dataclass
class StepDiagnostics:
    """Per-step bookkeeping used by conservation checks."""

    volume_before: float
    volume_after: float
    flux_in: float
    flux_out: float
    n_substeps: int

    @property
    def balance_error(self) -> float:
        return (self.volume_after - self.volume_before) - (self.flux_in - self.flux_out)

    @property
    def relative_balance_error(self) -> float:
        return abs(self.balance_error) / max(self.volume_after, 1.0)


@njit(cache=True)
def _advance(
    depth,
    vols,
    dt_total,
    inflow,
    ks_cell,
    bed,
    width,
    dx,
    s0_out,
    crest,
    floors,
    weir_len_e,
    att_cell,
    att_sub,
    zs,
    zoff,
    prefix,
    poff,
    kvol,
    pixel_area,
    cw,
    slope_eps,
    courant,
    dh_frac,
    dh_floor,
    dt_max,
    downstream_open,
    max_substeps,
):
    """Advance depths/volumes by dt_total with adaptive sub-stepping.

    Mutates ``depth`` and ``vols`` in place.  Returns
    (flux_in, flux_out, n_substeps, status, bad_cell).
    """
    n = depth.size
    nf = n - 1
    K = vols.size
    ne = att_cell.size

    qf = np.empty(nf)
    qw = np.empty(ne)
    dd = np.empty(n)
    dv = np.empty(K)
    stage = np.empty(K)
    area = np.empty(K)
    nu = np.empty(n)
    nu_s = np.empty(K)

    flux_in = 0.0
    flux_out = 0.0
    t_done = 0.0
    nsub = 0

    while dt_total - t_done > 1e-9:
        # subdomain stages from stored volumes (exact hypsometric inverse)
        for k in range(K):
            z0 = zoff[k]
            z1 = zoff[k + 1]
            m = z1 - z0
            v = vols[k]
            if v <= 0.0:
                stage[k] = zs[z0]
                area[k] = pixel_area[k]
            else:
                lo = 0
                hi = m
                while lo < hi:
                    mid = (lo + hi) // 2
                    if kvol[z0 + mid] < v:
                        lo = mid + 1
                    else:
                        hi = mid
                kk = lo
                if kk < 1:
                    kk = 1
                if kk > m:
                    kk = m
                stage[k] = (v / pixel_area[k] + prefix[poff[k] + kk]) / kk
                area[k] = pixel_area[k] * kk

        # channel face fluxes: Strickler law with upwind depth; magnitude
        # follows sqrt(max(|S|, eps)), linearised through zero slope.  nu
        # accumulates per-cell diffusion rates for the stability limit.
        for j in range(n):
            nu[j] = 0.0
        for k in range(K):
            nu_s[k] = 0.0
        max_cel = 0.0
        for j in range(nf):
            if not (math.isfinite(depth[j]) and math.isfinite(depth[j + 1])):
                return flux_in, flux_out, nsub, _STATUS_NONFINITE, j
            s = ((bed[j] + depth[j]) - (bed[j + 1] + depth[j + 1])) / dx
            if s >= 0.0:
                hu = depth[j]
                ks = ks_cell[j]
                bu = width[j]
            else:
                hu = depth[j + 1]
                ks = ks_cell[j + 1]
                bu = width[j + 1]
            if hu <= 0.0:
                qf[j] = 0.0
            else:
                amag = abs(s)
                conv = ks * bu * hu**FIVE_THIRDS
                if amag > slope_eps:
                    den = math.sqrt(amag)
                    dqds = conv / (2.0 * den)
                else:
                    den = math.sqrt(slope_eps)
                    dqds = conv / den
                q = conv * (s / den)
                qf[j] = q
                if q != 0.0:
                    cel = FIVE_THIRDS * abs(q) / (bu * hu)
                    if cel > max_cel:
                        max_cel = cel
                nu[j] += dqds / (width[j] * dx * dx)
                nu[j + 1] += dqds / (width[j + 1] * dx * dx)

        # downstream boundary: normal-depth outflow from the local bed slope
        if downstream_open and depth[n - 1] > 0.0:
            q_out = ks_cell[n - 1] * width[n - 1] * depth[n - 1] ** FIVE_THIRDS * math.sqrt(s0_out)
            cel = FIVE_THIRDS * q_out / (width[n - 1] * depth[n - 1])
            if cel > max_cel:
                max_cel = cel
        else:
            q_out = 0.0

        # broad-crested weir exchange, bidirectional, per attached cell
        for e in range(ne):
            j = att_cell[e]
            k = att_sub[e]
            a = bed[j] + depth[j]
            if a < crest[k]:
                a = crest[k]
            b = stage[k]
            if b < crest[k]:
                b = crest[k]
            d = a - b
            if d > 0.0:
                qw[e] = cw * weir_len_e[e] * d * math.sqrt(d)
            elif d < 0.0:
                qw[e] = -cw * weir_len_e[e] * (-d) * math.sqrt(-d)
            else:
                qw[e] = 0.0
            if d != 0.0:
                r = 1.5 * cw * weir_len_e[e] * math.sqrt(abs(d))
                nu[j] += r / (width[j] * dx)
                nu_s[k] += r / area[k]

        # tendencies
        for j in range(n):
            dd[j] = 0.0
        for k in range(K):
            dv[k] = 0.0
        dd[0] += inflow / (width[0] * dx)
        for j in range(nf):
            q = qf[j]
            dd[j] -= q / (width[j] * dx)
            dd[j + 1] += q / (width[j + 1] * dx)
        dd[n - 1] -= q_out / (width[n - 1] * dx)
        for e in range(ne):
            j = att_cell[e]
            dd[j] -= qw[e] / (width[j] * dx)
            dv[att_sub[e]] += qw[e]

        # sub-step selection: Courant on (5/3)V, diffusive stability from the
        # accumulated per-node exchange rates, bounded relative depth change,
        # positivity, and subdomains never give more than they hold
        dt = dt_total - t_done
        if dt > dt_max:
            dt = dt_max
        if max_cel > 0.0:
            lim = courant * dx / max_cel
            if lim < dt:
                dt = lim
        max_nu = 0.0
        for j in range(n):
            if nu[j] > max_nu:
                max_nu = nu[j]
        for k in range(K):
            if nu_s[k] > max_nu:
                max_nu = nu_s[k]
        if max_nu > 0.0:
            # nu already sums all exchange rates touching a node, so the
            # non-oscillatory explicit bound is dt*nu <= 1; keep 10% margin
            lim = 0.9 / max_nu
            if lim < dt:
                dt = lim
        for j in range(n):
            a = dd[j]
            if a != 0.0:
                ref = depth[j]
                if ref < dh_floor:
                    ref = dh_floor
                lim = dh_frac * ref / abs(a)
                if lim < dt:
                    dt = lim
                if a < 0.0 and depth[j] > 0.0:
                    lim = depth[j] / (-a)
                    if lim < dt:
                        dt = lim
        for k in range(K):
            a = dv[k]
            if a != 0.0:
                ref = stage[k] - floors[k]
                if ref < dh_floor:
                    ref = dh_floor
                lim = dh_frac * ref * area[k] / abs(a)
                if lim < dt:
                    dt = lim
                if a < 0.0 and vols[k] > 0.0:
                    lim = vols[k] / (-a)
                    if lim < dt:
                        dt = lim

        if not (dt > 0.0) or not math.isfinite(dt):
            return flux_in, flux_out, nsub, _STATUS_NONFINITE, -1

        # advance
        for j in range(n):
            depth[j] += dd[j] * dt
            if depth[j] < 0.0:
                depth[j] = 0.0
        for k in range(K):
            vols[k] += dv[k] * dt
            if vols[k] < 0.0:
                vols[k] = 0.0
        flux_in += inflow * dt
        flux_out += q_out * dt
        t_done += dt
        nsub += 1
        if nsub > max_substeps:
            return flux_in, flux_out, nsub, _STATUS_MAX_SUBSTEPS, -1

    return flux_in, flux_out, nsub, _STATUS_OK, -1


@dataclass
class Trajectory:
    """States sampled along a run, plus flux bookkeeping for balance checks."""

    times: np.ndarray
    states: list[HydroState]
    geometry: ReachGeometry
    flux_in: float = 0.0
    flux_out: float = 0.0

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def end_state(self) -> HydroState:
        return self.states[-1]

    def index_of(self, t: float, tol: float = 1e-6) -> int:
        i = int(np.searchsorted(self.times, t))
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.times.size and abs(self.times[j] - t) <= tol:
                return j
        raise KeyError(f"time {t} not sampled")

    def state_at(self, t: float, tol: float = 1e-6) -> HydroState:
        return self.states[self.index_of(t, tol)]

    def nearest_index(self, t: float) -> int:
        i = int(np.clip(np.searchsorted(self.times, t), 1, self.times.size - 1))
        if abs(self.times[i - 1] - t) <= abs(self.times[i] - t):
            return i - 1
        return i

    def wl_series(self, station: str) -> np.ndarray:
        cell = self.geometry.station_cells[station]
        bed = self.geometry.bed_elevation[cell]
        return np.array([bed + s.depth[cell] for s in self.states])

    def stage_series(self, sub_index: int) -> np.ndarray:
        return np.array([s.subdomain_stage[sub_index] for s in self.states])

    def sliced(self, t_a: float, t_b: float, tol: float = 1e-6) -> "Trajectory":
        keep = (self.times >= t_a - tol) & (self.times <= t_b + tol)
        idx = np.flatnonzero(keep)
        return Trajectory(
            times=self.times[idx],
            states=[self.states[i] for i in idx],
            geometry=self.geometry,
        )


def water_level_at(geometry: ReachGeometry, state: HydroState, station: str) -> float:
    """Water-surface elevation at a registered station."""
    if station not in geometry.station_cells:
        raise KeyError(f"unknown station {station!r}")
    cell = geometry.station_cells[station]
    return float(geometry.bed_elevation[cell] + state.depth[cell])


def flood_extent(state: HydroState, subdomain: FloodplainSubdomain) -> np.ndarray:
    """Boolean wet mask of a subdomain: wet where stage >= pixel elevation.

    Nodata pixels are always False; use the DEM valid mask to exclude them.
    """
    stage = float(state.subdomain_stage[subdomain.id - 1])
    elev = subdomain.dem.elevation
    wet = np.zeros(elev.shape, dtype=bool)
    valid = np.isfinite(elev)
    wet[valid] = stage >= elev[valid]
    return wet


def wsr(state: HydroState, subdomain: FloodplainSubdomain) -> float:
    """Wet surface ratio: wet pixels / valid pixels."""
    n_valid = subdomain.dem.n_valid
    if n_valid == 0:
        raise ValueError("subdomain DEM has no valid pixel")
    stage = float(state.subdomain_stage[subdomain.id - 1])
    return subdomain.hypsometry.wet_count(stage) / n_valid


def apply_state_correction(
    state: HydroState, delta_h: np.ndarray, subdomains
) -> HydroState:
    """Shift each subdomain stage by delta_h, clipped at the dry floor.

    Channel depths are untouched.  Clipping is silent apart from a debug log.
    """
    delta_h = np.asarray(delta_h, dtype=np.float64)
    subdomains = list(subdomains)
    if delta_h.shape != (len(subdomains),):
        raise ValueError("delta_h length must match the number of subdomains")
    if np.any(np.abs(delta_h) > 3.0 + 1e-12):
        raise ValueError("stage corrections must satisfy |dH| <= 3 m")
    new = state.copy()
    clipped = 0
    for k, sub in enumerate(subdomains):
        target = state.subdomain_stage[sub.id - 1] + delta_h[k]
        floor = sub.floor
        if target < floor:
            target = floor
            clipped += 1
        new.subdomain_stage[sub.id - 1] = target
    if clipped:
        log.debug("stage correction clipped at the dry floor in %d subdomain(s)", clipped)
    return new


class RiverModel:
    """Geometry + subdomains + solver options, with the integration API."""

    def __init__(
        self,
        geometry: ReachGeometry,
        subdomains=(),
        options: SolverOptions | None = None,
    ):
        self.geometry = geometry
        self.subdomains = list(subdomains)
        self.options = options or SolverOptions()
        ids = sorted(s.id for s in self.subdomains)
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("subdomain ids must be 1..K without gaps")
        self.subdomains.sort(key=lambda s: s.id)
        for sub in self.subdomains:
            sub.validate_against(geometry)

        g = geometry
        self._dx = float(g.cell_length)
        self._bed = np.ascontiguousarray(g.bed_elevation)
        self._width = np.ascontiguousarray(g.channel_width)
        self._seg = np.ascontiguousarray(g.friction_segment_id)
        self._s0_out = float(g.bed_slope[-1])

        cells, subs, weirs = [], [], []
        crest, floors, areas = [], [], []
        zs_parts, prefix_parts, kvol_parts = [], [], []
        zoff = [0]
        poff = [0]
        for k, sub in enumerate(self.subdomains):
            lw = sub.resolved_weir_length(g) / sub.n_attached
            for cell in sub.attached_cells():
                cells.append(cell)
                subs.append(k)
                weirs.append(lw)
            crest.append(sub.crest_elevation)
            floors.append(sub.floor)
            h = sub.hypsometry
            areas.append(h.pixel_area)
            zs_parts.append(h.zs)
            prefix_parts.append(h.prefix)
            kvol_parts.append(h.knot_volume)
            zoff.append(zoff[-1] + h.zs.size)
            poff.append(poff[-1] + h.prefix.size)
        self._att_cell = np.array(cells, dtype=np.int64)
        self._att_sub = np.array(subs, dtype=np.int64)
        self._weir_len = np.array(weirs, dtype=np.float64)
        self._crest = np.array(crest, dtype=np.float64)
        self._floors = np.array(floors, dtype=np.float64)
        self._areas = np.array(areas, dtype=np.float64)
        self._zs = np.concatenate(zs_parts) if zs_parts else np.empty(0)
        self._prefix = np.concatenate(prefix_parts) if prefix_parts else np.empty(0)
        self._kvol = np.concatenate(kvol_parts) if kvol_parts else np.empty(0)
        self._zoff = np.array(zoff, dtype=np.int64)
        self._poff = np.array(poff, dtype=np.int64)

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    def initial_state(self, discharge: float, friction: FrictionField, time: float = 0.0) -> HydroState:
        """Normal-depth profile at a steady discharge, with dry subdomains."""
        if discharge < 0:
            raise ValueError("discharge must be non-negative")
        ks = friction.ks[self._seg]
        s0 = self.geometry.bed_slope
        depth = (discharge / (ks * self._width * np.sqrt(s0))) ** 0.6
        stages = np.array([sub.floor for sub in self.subdomains])
        return HydroState(time=float(time), depth=depth, subdomain_stage=stages)

    def total_volume(self, state: HydroState) -> float:
        vol = float(np.sum(state.depth * self._width) * self._dx)
        for k, sub in enumerate(self.subdomains):
            vol += sub.hypsometry.volume(float(state.subdomain_stage[k]))
        return vol

    def step(
        self,
        state: HydroState,
        dt: float,
        inflow: float,
        friction: FrictionField,
        return_diagnostics: bool = False,
    ):
        """Advance the state by dt under a constant inflow."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        if not (inflow >= 0 and math.isfinite(inflow)):
            raise ValueError("inflow must be finite and non-negative")
        state.validate()
        opts = self.options

        depth = state.depth.copy()
        vols = np.array(
            [sub.hypsometry.volume(float(state.subdomain_stage[k]))
             for k, sub in enumerate(self.subdomains)],
            dtype=np.float64,
        )
        v_before = float(np.sum(depth * self._width) * self._dx + vols.sum())
        ks_cell = np.ascontiguousarray(friction.ks[self._seg])

        flux_in, flux_out, nsub, status, bad = _advance(
            depth,
            vols,
            float(dt),
            float(inflow),
            ks_cell,
            self._bed,
            self._width,
            self._dx,
            self._s0_out,
            self._crest,
            self._floors,
            self._weir_len,
            self._att_cell,
            self._att_sub,
            self._zs,
            self._zoff,
            self._prefix,
            self._poff,
            self._kvol,
            self._areas,
            opts.weir_coefficient,
            opts.slope_eps,
            opts.courant,
            opts.depth_change_frac,
            opts.depth_change_floor,
            opts.dt_max,
            opts.downstream_open,
            opts.max_substeps_per_step,
        )
        if status == _STATUS_NONFINITE:
            raise NonFiniteStateError(int(bad))
        if status == _STATUS_MAX_SUBSTEPS:
            raise SolverError(f"sub-step limit exceeded ({nsub} sub-steps for dt={dt})")

        stages = np.array(
            [sub.hypsometry.stage(float(vols[k])) for k, sub in enumerate(self.subdomains)],
            dtype=np.float64,
        )
        new = HydroState(time=state.time + dt, depth=depth, subdomain_stage=stages)
        v_after = float(np.sum(depth * self._width) * self._dx + vols.sum())
        diag = StepDiagnostics(
            volume_before=v_before,
            volume_after=v_after,
            flux_in=flux_in,
            flux_out=flux_out,
            n_substeps=nsub,
        )
        if diag.relative_balance_error > 1e-9:
            raise SolverError(
                f"mass balance violated: relative error {diag.relative_balance_error:.3e}"
            )
        if return_diagnostics:
            return new, diag
        return new

    def run(
        self,
        initial: HydroState,
        control: ControlVector,
        forcing,
        window: tuple[float, float],
        extra_times=(),
        correction_times=(),
        correction: np.ndarray | None = None,
    ) -> Trajectory:
        """Integrate over [t_a, t_b], sampling on the absolute output grid.

        Inflow at time t is mu * forcing(t) with mu from the control vector;
        friction comes from its first seven elements.  At each time listed in
        ``correction_times`` the stage correction (``correction`` if given,
        else the control's own delta_h) is applied; the stored sample at that
        instant is the post-correction state.
        """
        t_a, t_b = float(window[0]), float(window[1])
        if t_b < t_a:
            raise ValueError("window end before start")
        friction = control.friction()
        mu = control.mu
        corr = np.asarray(correction if correction is not None else control.delta_h,
                          dtype=np.float64)
        corr_times = sorted(t for t in correction_times if t_a - 1e-6 <= t <= t_b + 1e-6)

        grid = self._sample_grid(t_a, t_b, extra_times, corr_times)
        state = initial.copy(time=t_a)
        if corr_times and abs(corr_times[0] - t_a) <= 1e-6:
            state = apply_state_correction(state, corr, self.subdomains)
        states = [state.copy()]
        flux_in = 0.0
        flux_out = 0.0
        for t0, t1 in zip(grid[:-1], grid[1:]):
            inflow = mu * float(forcing(0.5 * (t0 + t1)))
            if inflow < 0:
                raise SolverError(f"negative inflow at t={0.5 * (t0 + t1)}")
            try:
                state, diag = self.step(state, t1 - t0, inflow, friction, return_diagnostics=True)
            except NonFiniteStateError:
                raise
            state.time = t1
            flux_in += diag.flux_in
            flux_out += diag.flux_out
            for tc in corr_times:
                if abs(tc - t1) <= 1e-6:
                    state = apply_state_correction(state, corr, self.subdomains)
            states.append(state.copy())
        return Trajectory(
            times=np.asarray(grid), states=states, geometry=self.geometry,
            flux_in=flux_in, flux_out=flux_out,
        )

    def _sample_grid(self, t_a, t_b, extra_times, corr_times) -> list[float]:
        if t_b == t_a:
            return [t_a]
        dt = self.options.output_interval
        k0 = math.ceil(t_a / dt - 1e-9)
        k1 = math.floor(t_b / dt + 1e-9)
        pts = [t_a, t_b]
        pts.extend(k * dt for k in range(k0, k1 + 1))
        pts.extend(t for t in extra_times if t_a <= t <= t_b)
        pts.extend(corr_times)
        pts.sort()
        grid = [pts[0]]
        for t in pts[1:]:
            if t - grid[-1] > 1e-6:
                grid.append(t)
        # keep the exact endpoint even if the last interior point nearly hits it
        if abs(grid[-1] - t_b) > 1e-6:
            grid.append(t_b)
        return grid

    # convenience wrappers over the module-level observables
    def water_level_at(self, state: HydroState, station: str) -> float:
        return water_level_at(self.geometry, state, station)

    def wsr(self, state: HydroState, sub_id: int) -> float:
        return wsr(state, self.subdomains[sub_id - 1])


def write_trajectory_csv(path, trajectory: Trajectory) -> None:
    """Write station water-level series as `time_s,station,value_m` rows."""
    stations = sorted(trajectory.geometry.station_cells)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time_s", "station", "value_m"])
        series = {s: trajectory.wl_series(s) for s in stations}
        for i, t in enumerate(trajectory.times):
            for s in stations:
                w.writerow([repr(float(t)), s, repr(float(series[s][i]))])


def read_trajectory_csv(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Read a trajectory CSV back as {station: (times, values)}."""
    out: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["time_s", "station", "value_m"]:
            raise ValueError("unexpected trajectory CSV header")
        for row in r:
            out.setdefault(row[1], []).append((float(row[0]), float(row[2])))
    return {
        s: (np.array([t for t, _ in rows]), np.array([v for _, v in rows]))
        for s, rows in out.items()
    }
