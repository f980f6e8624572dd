"""Empirical Gaussian anamorphosis for bounded, non-Gaussian observations.

Wet-surface-ratio components are mapped to Gaussian space through a
piecewise-linear transform built from the background ensemble: sorted
member values become knots whose images are the standard-normal quantiles
of their (tie-averaged) ranks.  Water-level components keep the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .observations import ObsKind


@dataclass(frozen=True)
class ComponentMap:
    """Monotone map for one observation component."""

    identity: bool
    knots: np.ndarray | None = None
    images: np.ndarray | None = None
    variance_floor: bool = False

    def forward(self, v: float) -> float:
        if self.identity:
            return float(v)
        return float(_piecewise(v, self.knots, self.images))

    def inverse(self, g: float) -> float:
        if self.identity:
            return float(g)
        return float(_piecewise(g, self.images, self.knots))


def _piecewise(x: float, xs: np.ndarray, ys: np.ndarray) -> float:
    """Piecewise-linear map with end-segment slope extrapolation."""
    if x <= xs[0]:
        slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        return ys[0] + slope * (x - xs[0])
    if x >= xs[-1]:
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return ys[-1] + slope * (x - xs[-1])
    return np.interp(x, xs, ys)


@dataclass
class Anamorphosis:
    """Per-component maps aligned with one observation vector."""

    components: list[ComponentMap]

    @property
    def n_components(self) -> int:
        return len(self.components)

    def forward(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return np.array([c.forward(v) for c, v in zip(self.components, values)])

    def inverse(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return np.array([c.inverse(v) for c, v in zip(self.components, values)])

    def forward_matrix(self, matrix: np.ndarray) -> np.ndarray:
        """Transform an (n_members, n_obs) matrix column-wise."""
        out = np.empty_like(matrix, dtype=np.float64)
        for j, comp in enumerate(self.components):
            if comp.identity:
                out[:, j] = matrix[:, j]
            else:
                out[:, j] = [comp.forward(v) for v in matrix[:, j]]
        return out

    @classmethod
    def identity(cls, n_components: int) -> "Anamorphosis":
        return cls([ComponentMap(identity=True) for _ in range(n_components)])


def build_component(values: np.ndarray) -> ComponentMap:
    """Map for one component from its ensemble of predicted values.

    Ranks r = 1..N map to the Gaussian quantiles of (r - 0.5)/N; equal
    values are collapsed to a single knot at their averaged rank.  A fully
    degenerate ensemble falls back to the identity with a variance-floor
    flag.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ValueError("need at least two members")
    order = np.sort(values)
    uniq, start = np.unique(order, return_index=True)
    if uniq.size < 2:
        return ComponentMap(identity=True, variance_floor=True)
    counts = np.diff(np.concatenate((start, [n])))
    mean_rank = start + 0.5 * (counts - 1) + 1.0   # averaged 1-based rank of each tie group
    images = ndtri((mean_rank - 0.5) / n)
    return ComponentMap(identity=False, knots=uniq, images=images)


def build_anamorphosis(obs_matrix: np.ndarray, kinds) -> Anamorphosis:
    """Anamorphosis from the background ensemble's observation equivalents.

    Parameters
    ----------
    obs_matrix : (n_members, n_obs) predicted observations.
    kinds : per-column observation kinds; only WSR columns get a transform.
    """
    obs_matrix = np.asarray(obs_matrix, dtype=np.float64)
    components = []
    for j, kind in enumerate(kinds):
        if kind is ObsKind.WSR:
            components.append(build_component(obs_matrix[:, j]))
        else:
            components.append(ComponentMap(identity=True))
    return Anamorphosis(components)
