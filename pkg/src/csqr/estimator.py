"""Scikit-learn compatible front end for causal spatial quantile regression."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .causal import AdjustmentConfig, LocationGroup, estimate_surface, neighborhood_adjusted_fit, sqte_at_location
from .data import Observations
from .network import TrainConfig, nll, train
from .quantiles import cdf, pdf, quantile
from .spatial import variant_spec


def _split_columns(X):
    """Design matrix layout: ``[T, covariates..., lon, lat]``."""
    if X.shape[1] < 3:
        raise ValueError("X needs a treatment column, at least one covariate and two coordinate columns")
    t = X[:, 0]
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("first column of X must be a binary 0/1 treatment")
    return t, X[:, 1:-2], X[:, -2:]


class SpatialQuantileRegressor(RegressorMixin, BaseEstimator):
    """Spline-mixture quantile regression with spatial basis features.

    ``X`` is laid out as ``[T, covariates..., lon, lat]``; the first column
    must be a 0/1 treatment and the last two the coordinates. ``predict``
    returns the conditional median.

    Parameters
    ----------
    variant : int
        Feature layout 1-5: covariates only, + coordinates, + Wendland
        features at one, two or three resolutions (9, 25, 49 nodes).
    include_coordinates : bool, optional
        Override whether raw coordinates enter the network.
    n_basis : int
        Number of M-/I-spline basis functions.
    hidden : tuple of int
        Hidden layer widths.
    coverage : float, optional
        If set, fit on the neighbourhood of the domain centre holding this
        fraction of rows (spatial confounding adjustment).
    scaler : {"quantile", "minmax"}
        Response scaling onto the spline axis.
    random_state : int
        Seed for initialisation and batch shuffling.
    """

    def __init__(
        self,
        variant=5,
        include_coordinates=None,
        n_basis=10,
        hidden=(32, 32),
        learning_rate=1e-3,
        batch_size=256,
        epochs=200,
        coverage=None,
        scaler="quantile",
        random_state=0,
    ):
        self.variant = variant
        self.include_coordinates = include_coordinates
        self.n_basis = n_basis
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.coverage = coverage
        self.scaler = scaler
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            seed=self.random_state,
            K=self.n_basis,
            hidden=tuple(self.hidden),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            scaler=self.scaler,
        )

    def _feature_spec(self):
        return variant_spec(self.variant, self.include_coordinates)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        t, cov, coords = _split_columns(X)
        obs = Observations(y, t, cov, coords)
        spec = self._feature_spec()
        cfg = self._config()
        if self.coverage is not None:
            self.model_ = neighborhood_adjusted_fit(obs, spec, cfg, AdjustmentConfig(self.coverage))
        else:
            self.model_ = train(obs, spec.fit(obs), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def _features(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        t, cov, coords = _split_columns(X)
        return self.model_.features(t, cov, coords)

    def predict_quantile(self, X, tau):
        """Conditional quantiles, shape ``(n_samples, n_tau)``."""
        F = self._features(X)
        return quantile(self.model_, np.atleast_1d(tau), F)

    def predict(self, X):
        return self.predict_quantile(X, 0.5)[:, 0]

    def pdf(self, X, y):
        F = self._features(X)
        return pdf(self.model_, np.asarray(y, dtype=float), F)

    def cdf(self, X, y):
        F = self._features(X)
        return cdf(self.model_, np.asarray(y, dtype=float), F)

    def log_likelihood(self, X, y):
        """Mean log-likelihood of ``y`` on the scaled response axis."""
        F = self._features(X)
        return -nll(self.model_, np.asarray(y, dtype=float), F)

    def sqte(self, X, tau):
        """Plug-in effect surface over the locations present in ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        t, cov, coords = _split_columns(X)
        return estimate_surface(self.model_, Observations(np.zeros(len(X)), t, cov, coords), tau)

    def sqte_at(self, location, covariates, tau):
        check_is_fitted(self, "model_")
        return sqte_at_location(self.model_, LocationGroup(location, covariates), tau)

