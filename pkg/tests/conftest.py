import numpy as np
import pytest

from csqr.network import NetworkParams, QuantileModel, ResponseScaler, init_params
from csqr.spatial import make_recipe
from csqr.splines import build_grid


def random_model(seed, n_cov=3, hidden=(6,), K=5, weight_scale=3.0, scaler=None):
    """Untrained model with inflated weights so mixtures are far from uniform."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, n_cov))
    coords = rng.uniform(size=(50, 2))
    recipe = make_recipe(X, coords)
    params = init_params([recipe.n_features, *hidden, K], rng)
    params = NetworkParams([w * weight_scale for w in params.weights], [rng.normal(size=b.shape) for b in params.biases])
    if scaler is None:
        scaler = ResponseScaler.minmax(np.array([-2.0, 3.0]))
    return QuantileModel(params, build_grid(K), recipe, scaler)


@pytest.fixture
def model():
    return random_model(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
