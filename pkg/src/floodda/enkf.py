"""Stochastic ensemble Kalman filter with Gaussian anamorphosis.

One analysis: draw (or inherit) the control ensemble, propagate each member
through the hydraulic model over the window (with a short spin-up), map the
trajectories to observation space, perturb the observations, transform the
bounded components to Gaussian space, compute the gain from ensemble sample
covariances, update the controls, and re-integrate with the analysed values.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import truncnorm

from .anamorphosis import Anamorphosis, build_anamorphosis
from .control import ControlVector, PriorElement, PriorSpec
from .observations import ObsKind, ObsVector
from .rng import DRAW, PERTURB, REDRAW, substream
from .solver import RiverModel, SolverError, Trajectory, water_level_at, wsr

log = logging.getLogger(__name__)

SPIN_UP_DEFAULT = 10800.0


@dataclass
class EnsembleMember:
    """One member: its control, its window trajectory, its predicted observations."""

    control: ControlVector
    trajectory: Trajectory | None = None
    obs_equiv: ObsVector | None = None

    @property
    def end_state(self):
        return self.trajectory.end_state


@dataclass
class Ensemble:
    members: list[EnsembleMember]

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        dims = {len(m.obs_equiv) for m in self.members if m.obs_equiv is not None}
        if len(dims) > 1:
            raise ValueError("members disagree on observation dimension")

    @property
    def n_members(self) -> int:
        return len(self.members)

    def controls_matrix(self) -> np.ndarray:
        return np.array([m.control.values for m in self.members])

    def obs_matrix(self) -> np.ndarray:
        return np.array([m.obs_equiv.values for m in self.members])

    def control_mean(self) -> np.ndarray:
        return self.controls_matrix().mean(axis=0)

    def control_std(self) -> np.ndarray:
        return self.controls_matrix().std(axis=0, ddof=1)


def _element_values(element: PriorElement, uniforms: np.ndarray) -> np.ndarray:
    if element.std == 0.0:
        v = float(np.clip(element.mean, element.lower, element.upper))
        return np.full(uniforms.size, v)
    a = (element.lower - element.mean) / element.std
    b = (element.upper - element.mean) / element.std
    return truncnorm.ppf(uniforms, a, b, loc=element.mean, scale=element.std)


def draw_control(prior: PriorSpec, seed: int, member: int) -> ControlVector:
    """One truncated-Gaussian control draw, deterministic per (seed, member, element)."""
    values = np.empty(len(prior.elements))
    for j, element in enumerate(prior.elements):
        u = np.array([substream(seed, DRAW, member, j).random()])
        values[j] = _element_values(element, u)[0]
    return ControlVector(values)


def draw_ensemble(prior: PriorSpec, n_members: int, seed: int) -> list[ControlVector]:
    """Independent truncated-Gaussian draws per element and member.

    Sample m, element j always comes from the stream (seed, m, j), whatever
    the batch size, so single-member redraws reproduce ensemble rows.
    """
    if n_members < 2:
        raise ValueError("n_members must be at least 2")
    values = np.empty((n_members, len(prior.elements)))
    for j, element in enumerate(prior.elements):
        uniforms = np.array([
            substream(seed, DRAW, m, j).random() for m in range(n_members)
        ])
        values[:, j] = _element_values(element, uniforms)
    return [ControlVector(row) for row in values]


def perturb_observations(y_obs: ObsVector, n_members: int, seed: int) -> list[ObsVector]:
    """Member copies of the observation vector with N(0, sigma^2) noise added;
    WSR entries are clipped back to [0, 1]."""
    sigmas = y_obs.sigmas
    values = y_obs.values
    out = []
    for m in range(n_members):
        rng = substream(seed, PERTURB, m)
        eps = sigmas * rng.standard_normal(len(y_obs))
        out.append(y_obs.with_values(values + eps))
    return out


def observe(trajectory: Trajectory, template: ObsVector, model: RiverModel) -> ObsVector:
    """Model equivalents of the observations along a member trajectory.

    Water levels are read at the nearest output instant (within half the
    output interval); wet-surface ratios at the exact overpass instant,
    which the propagation guarantees is sampled.
    """
    half = 0.5 * model.options.output_interval
    values = []
    for e in template.entries:
        if e.time < trajectory.start_time - 1e-6 or e.time > trajectory.end_time + 1e-6:
            raise ValueError(f"observation time {e.time} outside trajectory span")
        if e.kind is ObsKind.WL:
            i = trajectory.nearest_index(e.time)
            if abs(trajectory.times[i] - e.time) > half + 1e-9:
                raise ValueError(f"no output instant within {half}s of t={e.time}")
            values.append(water_level_at(model.geometry, trajectory.states[i], str(e.ident)))
        else:
            state = trajectory.state_at(e.time)
            values.append(wsr(state, model.subdomains[int(e.ident) - 1]))
    return template.with_values(values, clip_wsr=False)


def propagate_member(
    model: RiverModel,
    state,
    control: ControlVector,
    forcing,
    window: tuple[float, float],
    template: ObsVector | None = None,
    spin_up: float = SPIN_UP_DEFAULT,
    mean_dh: np.ndarray | None = None,
) -> EnsembleMember:
    """Spin-up then window integration for one member.

    The restart state is re-stamped ``spin_up`` seconds before the window so
    depths adjust to the member's parameters before observations are taken.
    Stage corrections are applied at each WSR instant: the member's own
    delta_h by default, or ``mean_dh`` when given (analysis re-runs).
    """
    t_a, t_b = window
    wsr_times = tuple(template.wsr_times()) if template is not None else ()
    if spin_up > 0:
        spin = model.run(state.copy(time=t_a - spin_up), control, forcing,
                         (t_a - spin_up, t_a))
        start = spin.end_state
    else:
        start = state
    traj = model.run(
        start, control, forcing, (t_a, t_b),
        extra_times=wsr_times,
        correction_times=wsr_times,
        correction=mean_dh,
    )
    obs_equiv = (observe(traj, template, model)
                 if template is not None else ObsVector([]))
    return EnsembleMember(control=control, trajectory=traj, obs_equiv=obs_equiv)


def _propagate(
    model,
    prev_states,
    controls,
    forcing,
    window,
    template,
    spin_up,
    mean_dh,
    prior,
    seed,
    threads,
) -> Ensemble:
    if len(prev_states) != len(controls):
        raise ValueError("need one restart state per member")
    final_controls = list(controls)

    def task(i: int) -> EnsembleMember:
        control = final_controls[i]
        for attempt in range(4):
            try:
                return propagate_member(model, prev_states[i], control, forcing,
                                        window, template, spin_up, mean_dh)
            except SolverError as err:
                if prior is None or attempt == 3:
                    raise
                control = draw_control(prior, substream_seed(seed, i, attempt), 0)
                final_controls[i] = control
                log.warning("member %d diverged (%s); replaced by a fresh prior draw",
                            i, err)
        raise AssertionError("unreachable")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            members = list(pool.map(task, range(len(controls))))
    else:
        members = [task(i) for i in range(len(controls))]
    return Ensemble(members)


def substream_seed(seed: int, member: int, attempt: int) -> int:
    from .rng import child_seed

    return child_seed(seed, REDRAW, member, attempt)


def propagate_background(
    model,
    prev_states,
    controls,
    forcing,
    window,
    template=None,
    spin_up: float = SPIN_UP_DEFAULT,
    prior: PriorSpec | None = None,
    seed: int = 0,
    threads: int = 1,
) -> Ensemble:
    """Background step: members run with their own stage corrections."""
    return _propagate(model, prev_states, controls, forcing, window, template,
                      spin_up, None, prior, seed, threads)


def propagate_analysis(
    model,
    prev_states,
    analyzed_controls,
    forcing,
    window,
    template=None,
    spin_up: float = SPIN_UP_DEFAULT,
    prior: PriorSpec | None = None,
    seed: int = 0,
    threads: int = 1,
) -> Ensemble:
    """Analysis re-run: every member applies the ensemble-mean stage correction,
    which keeps the corrected water-level field smooth across members."""
    mean_dh = np.mean([c.delta_h for c in analyzed_controls], axis=0)
    return _propagate(model, prev_states, analyzed_controls, forcing, window,
                      template, spin_up, mean_dh, prior, seed, threads)


@dataclass
class AnalysisResult:
    controls: list[ControlVector]
    gain: np.ndarray                   # (n_control, n_obs)
    background_mean: np.ndarray
    background_std: np.ndarray
    analysis_mean: np.ndarray
    analysis_std: np.ndarray
    jittered: bool = False


def analysis_update(
    ensemble: Ensemble,
    y_obs: ObsVector,
    anamorphosis: Anamorphosis | None,
    seed: int,
    perturbed: list[ObsVector] | None = None,
) -> AnalysisResult:
    """Update the control ensemble from the observations.

    Covariances are ensemble estimates with 1/(N-1); the observation-error
    covariance in transformed space is the diagonal of sample variances of
    the transformed perturbed observations (identity components keep their
    sigma^2 exactly).  The gain solves the SPD innovation system by Cholesky
    factorisation; a diagonal jitter of 1e-10 * trace is added once if the
    factorisation fails.
    """
    n_obs = len(y_obs)
    if n_obs < 1:
        raise ValueError("need at least one observation")
    n_members = ensemble.n_members
    if anamorphosis is None:
        anamorphosis = Anamorphosis.identity(n_obs)

    X = ensemble.controls_matrix()
    Y = ensemble.obs_matrix()
    if Y.shape != (n_members, n_obs):
        raise ValueError("ensemble observation dimension does not match y_obs")
    Yt = anamorphosis.forward_matrix(Y)

    if perturbed is None:
        perturbed = perturb_observations(y_obs, n_members, seed)
    Yo = np.array([p.values for p in perturbed])
    Yot = anamorphosis.forward_matrix(Yo)

    r_diag = np.empty(n_obs)
    sigmas = y_obs.sigmas
    for j, comp in enumerate(anamorphosis.components):
        if comp.identity:
            r_diag[j] = sigmas[j] ** 2
        else:
            r_diag[j] = max(float(np.var(Yot[:, j], ddof=1)), 1e-12)

    ax = X - X.mean(axis=0)
    ay = Yt - Yt.mean(axis=0)
    p_xy = ax.T @ ay / (n_members - 1)
    p_yy = ay.T @ ay / (n_members - 1)
    s = p_yy + np.diag(r_diag)

    jittered = False
    try:
        cho = cho_factor(s, lower=True)
    except LinAlgError:
        jittered = True
        s = s + 1e-10 * np.trace(s) * np.eye(n_obs)
        try:
            cho = cho_factor(s, lower=True)
        except LinAlgError as err:
            raise SolverError("innovation covariance not positive definite") from err
    gain = cho_solve(cho, p_xy.T).T

    innovations = Yot - Yt
    xa = X + innovations @ gain.T
    controls = [ControlVector(row).clipped() for row in xa]
    xa_clipped = np.array([c.values for c in controls])
    return AnalysisResult(
        controls=controls,
        gain=gain,
        background_mean=X.mean(axis=0),
        background_std=X.std(axis=0, ddof=1),
        analysis_mean=xa_clipped.mean(axis=0),
        analysis_std=xa_clipped.std(axis=0, ddof=1),
        jittered=jittered,
    )


def build_obs_anamorphosis(ensemble: Ensemble, y_obs: ObsVector) -> Anamorphosis:
    """Anamorphosis from the background ensemble, aligned with y_obs."""
    return build_anamorphosis(ensemble.obs_matrix(), y_obs.kinds)
