import math

import numpy as np
import pytest

from conftest import random_model
from csqr.causal import (
    AdjustmentConfig,
    LocationGroup,
    bootstrap_ci,
    counterfactual_gaps,
    estimate_surface,
    neighborhood_adjusted_fit,
    neighbourhood,
    resample_within_locations,
    sqte_at_location,
    sqte_average,
)
from csqr.data import Observations
from csqr.exceptions import ConfigurationError, InsufficientDataError
from csqr.network import NetworkParams, QuantileModel, TrainConfig
from csqr.quantiles import quantile
from csqr.simulate import ScenarioSpec, generate
from csqr.spatial import variant_spec


def _grid_obs(side=5, n=8, seed=0, d=2):
    rng = np.random.default_rng(seed)
    g = np.linspace(0, 1, side)
    locs = np.array([(a, b) for a in g for b in g])
    coords = np.repeat(locs, n, axis=0)
    N = len(coords)
    t = rng.integers(0, 2, N).astype(float)
    X = rng.normal(size=(N, d))
    y = X[:, 0] + t * (1 + coords[:, 0]) + rng.normal(size=N)
    return Observations(y, t, X, coords)


def _blind_model(seed=0):
    """Random model whose first layer ignores the treatment column."""
    m = random_model(seed)
    W = [w.copy() for w in m.params.weights]
    W[0][:, 0] = 0.0
    return QuantileModel(NetworkParams(W, m.params.biases), m.grid, m.recipe, m.scaler)


def test_gaps_match_direct_quantiles(model):
    rng = np.random.default_rng(1)
    X, coords = rng.normal(size=(6, 3)), rng.uniform(size=(6, 2))
    gaps = counterfactual_gaps(model, X, coords, [0.1, 0.5])
    for i in range(6):
        q1 = quantile(model, [0.1, 0.5], model.features([1.0], X[i : i + 1], coords[i : i + 1]))
        q0 = quantile(model, [0.1, 0.5], model.features([0.0], X[i : i + 1], coords[i : i + 1]))
        np.testing.assert_allclose(gaps[i], (q1 - q0)[0], atol=1e-12)


def test_location_estimate_is_row_average(model):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(5, 3))
    loc = np.array([0.2, 0.7])
    gaps = counterfactual_gaps(model, X, np.repeat(loc[None], 5, axis=0), [0.25])
    assert sqte_at_location(model, LocationGroup(loc, X), 0.25) == pytest.approx(gaps.mean())
    assert sqte_at_location(model, LocationGroup(loc, X), [0.25]).shape == (1,)


def test_blind_model_has_zero_effect():
    m = _blind_model()
    rng = np.random.default_rng(3)
    est = sqte_at_location(m, LocationGroup([0.5, 0.5], rng.normal(size=(4, 3))), [0.05, 0.5, 0.95])
    np.testing.assert_allclose(est, 0.0, atol=1e-12)


def test_empty_group_and_average():
    with pytest.raises(ValueError):
        sqte_at_location(random_model(0), LocationGroup([0, 0], np.zeros((0, 3))), 0.5)
    assert sqte_average([[1.0, 2.0], [3.0, 6.0]]).tolist() == [2.0, 4.0]
    with pytest.raises(ValueError):
        sqte_average([])


def test_surface_rows_and_average():
    obs = _grid_obs(side=3, n=4, d=3)
    m = random_model(4)
    surface = estimate_surface(m, obs, [0.05, 0.5])
    P = 9
    assert surface.estimates.shape == (P, 2)
    frame = surface.to_frame()
    assert len(frame) == 2 * P + 2
    assert list(frame.columns) == ["lon", "lat", "tau", "sqte", "n_p"]
    avg = frame[frame["lon"].isna()]
    np.testing.assert_allclose(avg["sqte"], surface.estimates.mean(axis=0))
    assert (frame["n_p"].iloc[:-2] == 4).all()


def test_neighbourhood_radius_oracle():
    obs = _grid_obs(side=10, n=3)
    idx, radius = neighbourhood(obs, 0.2)
    d = np.sort(np.hypot(obs.coords[:, 0] - 0.5, obs.coords[:, 1] - 0.5))
    k = math.ceil(0.2 * len(obs))
    assert radius == pytest.approx(d[k - 1])
    assert len(idx) >= k
    assert len(idx) == np.sum(d <= radius)


def test_neighbourhood_scaled_coordinates():
    obs = _grid_obs(side=4, n=2)
    shifted = Observations(obs.y, obs.t, obs.X, obs.coords * 30 + 100)
    a, ra = neighbourhood(obs, 0.3)
    b, rb = neighbourhood(shifted, 0.3)
    np.testing.assert_array_equal(a, b)
    assert ra == pytest.approx(rb)


def test_adjusted_fit_records_radius_and_subset():
    obs = _grid_obs(side=10, n=10)
    cfg = TrainConfig(seed=0, epochs=2)
    m = neighborhood_adjusted_fit(obs, variant_spec(3), cfg, AdjustmentConfig(0.2))
    a = m.train_meta["adjustment"]
    assert a["subset_size"] == m.train_meta["n_train"]
    assert a["subset_size"] >= 200 and a["n_total"] == 1000
    # lattice rebuilt on the subregion, coordinate scaling kept global
    nodes = m.recipe.node_grids[0].nodes
    assert nodes.min() > 0.0 and nodes.max() < 1.0
    np.testing.assert_allclose(m.recipe.coord_min, [0, 0])
    np.testing.assert_allclose(m.recipe.coord_max, [1, 1])


def test_adjustment_errors():
    with pytest.raises(ConfigurationError):
        AdjustmentConfig(0.0)
    with pytest.raises(ConfigurationError):
        AdjustmentConfig(0.2, mode="everywhere")
    obs = _grid_obs(side=5, n=4)
    with pytest.raises(InsufficientDataError):
        neighborhood_adjusted_fit(obs, variant_spec(1), TrainConfig(seed=0, epochs=1), AdjustmentConfig(0.1))


def test_resampling_stays_within_locations():
    obs = _grid_obs(side=3, n=5)
    idx = resample_within_locations(obs, np.random.default_rng(0))
    assert len(idx) == len(obs)
    _, inv = obs.locations()
    np.testing.assert_array_equal(np.bincount(inv[idx]), np.bincount(inv))


def test_bootstrap_shapes_and_determinism():
    obs = _grid_obs(side=3, n=20)
    cfg = TrainConfig(seed=1, epochs=2)
    a = bootstrap_ci(obs, variant_spec(1), cfg, B=3, taus=[0.05, 0.5], seed=5)
    b = bootstrap_ci(obs, variant_spec(1), cfg, B=3, taus=[0.05, 0.5], seed=5)
    assert a.sd.shape == (9, 2)
    assert np.all(a.lower <= a.upper)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    np.testing.assert_array_equal(a.sd, b.sd)
    frame = a.to_frame()
    assert {"sd", "lower", "upper"} <= set(frame.columns)
    assert len(frame) == 2 * 9 + 2
    with pytest.raises(ConfigurationError):
        bootstrap_ci(obs, variant_spec(1), cfg, B=1, taus=[0.5])


@pytest.mark.slow
def test_bootstrap_interval_covers_truth_on_simple_model():
    # y = x + t (1 + s1) + N(0, 1): the effect at every level is 1 + s1
    obs = _grid_obs(side=2, n=150, seed=3, d=1)
    cfg = TrainConfig(seed=0, epochs=40, learning_rate=5e-3)
    surface = bootstrap_ci(obs, variant_spec(2), cfg, B=8, taus=[0.5], seed=0)
    truth = 1 + surface.locations[:, 0]
    half = 2.5 * surface.sd[:, 0]
    covered = np.abs(surface.estimates[:, 0] - truth) <= half + 0.1
    assert covered.mean() >= 0.75


def test_scenario_data_feeds_surface():
    field = generate(ScenarioSpec(1, grid=3, n=6), 0)
    surface = estimate_surface(random_model(0, n_cov=6), field.observations(), [0.5])
    assert surface.estimates.shape == (9, 1)
