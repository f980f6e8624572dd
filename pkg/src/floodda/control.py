"""The assimilated control vector and its prior specification.

Element ordering is fixed: indices 0..6 are the Strickler coefficients
(floodplain then riverbed segments 1..6), index 7 the inflow multiplier,
indices 8..12 the five floodplain stage corrections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import KS_MAX, KS_MIN, FrictionField

N_ELEMENTS = 13
MU_MIN, MU_MAX = 0.1, 5.0
DH_MIN, DH_MAX = -3.0, 3.0

ELEMENT_NAMES: tuple[str, ...] = (
    "ks0", "ks1", "ks2", "ks3", "ks4", "ks5", "ks6",
    "mu",
    "dh1", "dh2", "dh3", "dh4", "dh5",
)

LOWER_BOUNDS = np.array([KS_MIN] * 7 + [MU_MIN] + [DH_MIN] * 5)
UPPER_BOUNDS = np.array([KS_MAX] * 7 + [MU_MAX] + [DH_MAX] * 5)


@dataclass(frozen=True)
class ControlVector:
    """13 assimilated quantities: ks0..ks6, mu, dh1..dh5."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (N_ELEMENTS,):
            raise ValueError(f"control vector must have {N_ELEMENTS} elements")
        if not np.all(np.isfinite(values)):
            raise ValueError("control vector must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def assemble(cls, ks, mu: float, delta_h) -> "ControlVector":
        return cls(np.concatenate((np.asarray(ks, dtype=np.float64),
                                   [float(mu)],
                                   np.asarray(delta_h, dtype=np.float64))))

    @property
    def ks(self) -> np.ndarray:
        return self.values[0:7]

    @property
    def mu(self) -> float:
        return float(self.values[7])

    @property
    def delta_h(self) -> np.ndarray:
        return self.values[8:13]

    def friction(self) -> FrictionField:
        return FrictionField(self.ks.copy())

    def clipped(self) -> "ControlVector":
        return ControlVector(np.clip(self.values, LOWER_BOUNDS, UPPER_BOUNDS))

    def in_bounds(self) -> bool:
        return bool(np.all(self.values >= LOWER_BOUNDS) and np.all(self.values <= UPPER_BOUNDS))


@dataclass(frozen=True)
class PriorElement:
    """Truncated-Gaussian prior for one control element."""

    mean: float
    std: float
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.std < 0:
            raise ValueError("prior std must be non-negative")
        if self.lower > self.upper:
            raise ValueError("degenerate prior bounds (lower > upper)")


@dataclass(frozen=True)
class PriorSpec:
    """Per-element priors for the full control vector."""

    elements: tuple[PriorElement, ...]

    def __post_init__(self) -> None:
        if len(self.elements) != N_ELEMENTS:
            raise ValueError(f"prior needs {N_ELEMENTS} elements")

    @classmethod
    def build(
        cls,
        ks_mean=30.0,
        ks_std=6.0,
        mu_mean=1.0,
        mu_std=0.3,
        dh_mean=0.0,
        dh_std=0.4,
    ) -> "PriorSpec":
        ks_mean = np.broadcast_to(np.asarray(ks_mean, dtype=np.float64), (7,))
        ks_std = np.broadcast_to(np.asarray(ks_std, dtype=np.float64), (7,))
        elements = [
            PriorElement(float(m), float(s), KS_MIN, KS_MAX)
            for m, s in zip(ks_mean, ks_std)
        ]
        elements.append(PriorElement(float(mu_mean), float(mu_std), MU_MIN, MU_MAX))
        elements.extend(
            PriorElement(float(dh_mean), float(dh_std), DH_MIN, DH_MAX) for _ in range(5)
        )
        return cls(tuple(elements))

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.elements])

    @property
    def stds(self) -> np.ndarray:
        return np.array([e.std for e in self.elements])

    def mean_control(self) -> ControlVector:
        return ControlVector(self.means).clipped()

    def recentred(self, means, stds) -> "PriorSpec":
        """New spec with updated mean/std per element; truncation bounds kept."""
        means = np.asarray(means, dtype=np.float64)
        stds = np.asarray(stds, dtype=np.float64)
        elements = tuple(
            PriorElement(float(np.clip(m, e.lower, e.upper)), float(s), e.lower, e.upper)
            for e, m, s in zip(self.elements, means, stds)
        )
        return PriorSpec(elements)

    def fixed_delta_h(self) -> "PriorSpec":
        """Spec with the stage-correction elements pinned to zero."""
        elements = list(self.elements)
        for i in range(8, 13):
            e = elements[i]
            elements[i] = PriorElement(0.0, 0.0, e.lower, e.upper)
        return PriorSpec(tuple(elements))
