import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from floodda.anamorphosis import Anamorphosis, build_anamorphosis, build_component
from floodda.observations import ObsKind


def test_gaussian_quantile_input_gives_affine_map():
    # members already at Gaussian quantiles: the map reduces to (v - mu)/sd
    n = 75
    mu, sd = 0.4, 0.1
    quantiles = ndtri((np.arange(1, n + 1) - 0.5) / n)
    values = mu + sd * quantiles
    comp = build_component(values)
    probe = np.linspace(values[2], values[-3], 40)
    mapped = np.array([comp.forward(v) for v in probe])
    assert np.allclose(mapped, (probe - mu) / sd, atol=1e-9)


def test_degenerate_falls_back_to_identity():
    comp = build_component(np.zeros(10))
    assert comp.identity and comp.variance_floor
    assert comp.forward(0.3) == 0.3
    assert comp.inverse(-1.2) == -1.2


def test_knot_round_trip_exact():
    rng = np.random.default_rng(0)
    values = rng.beta(2.0, 5.0, 75)
    comp = build_component(values)
    for v in comp.knots:
        assert comp.inverse(comp.forward(v)) == pytest.approx(v, abs=1e-9)


def test_ties_collapse_to_averaged_rank():
    values = np.array([0.0, 0.0, 0.0, 0.5, 1.0])
    comp = build_component(values)
    assert comp.knots.size == 3
    # tie group {0,0,0} holds ranks 1..3, averaged rank 2
    assert comp.images[0] == pytest.approx(ndtri((2.0 - 0.5) / 5.0))
    assert np.all(np.diff(comp.images) > 0)


def test_strict_monotonicity_and_extrapolation():
    rng = np.random.default_rng(1)
    comp = build_component(rng.beta(2.0, 4.0, 60))
    probes = np.linspace(-0.5, 1.5, 301)   # beyond the knot hull on both sides
    out = np.array([comp.forward(v) for v in probes])
    assert np.all(np.diff(out) > 0)


def test_transformed_background_moments():
    # the transformed background ensemble is close to standard normal
    rng = np.random.default_rng(7)
    values = rng.beta(2.0, 5.0, 75)
    comp = build_component(values)
    mapped = np.array([comp.forward(v) for v in values])
    assert abs(np.mean(mapped)) < 0.2
    assert 0.6 < np.var(mapped, ddof=1) < 1.4


def test_build_anamorphosis_identity_for_wl():
    rng = np.random.default_rng(2)
    matrix = np.column_stack([rng.normal(10.0, 1.0, 30), rng.beta(2, 3, 30)])
    ana = build_anamorphosis(matrix, [ObsKind.WL, ObsKind.WSR])
    assert ana.components[0].identity
    assert not ana.components[1].identity
    fwd = ana.forward([11.0, 0.5])
    assert fwd[0] == 11.0


def test_forward_matrix_matches_scalar_path():
    rng = np.random.default_rng(3)
    matrix = np.column_stack([rng.normal(size=20), rng.beta(2, 2, 20)])
    ana = build_anamorphosis(matrix, [ObsKind.WL, ObsKind.WSR])
    full = ana.forward_matrix(matrix)
    for i in range(20):
        assert np.allclose(full[i], ana.forward(matrix[i]))


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-4.0, max_value=4.0))
def test_round_trip_property(g):
    rng = np.random.default_rng(11)
    comp = build_component(rng.beta(2.5, 3.5, 40))
    assert comp.forward(comp.inverse(g)) == pytest.approx(g, abs=1e-9)
