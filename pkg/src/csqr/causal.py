"""Plug-in spatial quantile treatment effects and neighbourhood adjustment.

The effect at location ``s_p`` is estimated by averaging, over the rows
observed there, the gap between the fitted quantile with the treatment set to
1 and with it set to 0; every other input is left at its observed value.
Identification rests on SUTVA, consistency, ignorability and positivity,
none of which is (or can be) checked here.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, InsufficientDataError
from .network import train
from .quantiles import check_levels, quantile


@dataclass
class LocationGroup:
    """Rows sharing one location; only the covariates enter the estimator."""

    location: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float).reshape(2)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))

    @property
    def n(self):
        return len(self.X)


def counterfactual_gaps(model, X, coords, tau):
    """Per-row q(tau | T=1, x, s) - q(tau | T=0, x, s); shape ``(n, n_tau)``."""
    n = len(X)
    q1 = quantile(model, tau, model.features(np.ones(n), X, coords))
    q0 = quantile(model, tau, model.features(np.zeros(n), X, coords))
    return q1 - q0


def sqte_at_location(model, group, tau):
    """Plug-in effect at one location; a float for scalar ``tau``, else one value per level."""
    if group.n == 0:
        raise ValueError("empty location group")
    coords = np.repeat(group.location[None, :], group.n, axis=0)
    est = counterfactual_gaps(model, group.X, coords, check_levels(tau)).mean(axis=0)
    return float(est[0]) if np.ndim(tau) == 0 else est


def sqte_average(estimates):
    """Unweighted mean over locations (axis 0)."""
    estimates = np.asarray(estimates, dtype=float)
    if len(estimates) == 0:
        raise ValueError("no locations")
    return estimates.mean(axis=0)


@dataclass
class SqteSurface:
    """Per-location effect estimates on a grid of quantile levels.

    ``estimates`` has shape ``(P, n_tau)``. ``sd``, ``lower`` and ``upper``
    are optional arrays of the same shape from bootstrap replicates.
    """

    taus: np.ndarray
    locations: np.ndarray
    estimates: np.ndarray
    n_p: np.ndarray
    sd: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def average(self):
        return sqte_average(self.estimates)

    def to_frame(self):
        """Long table with columns lon, lat, tau, sqte, n_p.

        Bootstrap surfaces add sd, lower and upper. Spatial-average rows come
        last with empty lon/lat; their ``sd`` is the across-replicate sd of
        the average.
        """
        P, m = self.estimates.shape
        loc = pd.DataFrame(
            {
                "lon": np.repeat(self.locations[:, 0], m),
                "lat": np.repeat(self.locations[:, 1], m),
                "tau": np.tile(self.taus, P),
                "sqte": self.estimates.ravel(),
                "n_p": np.repeat(self.n_p, m),
            }
        )
        avg = pd.DataFrame(
            {
                "lon": np.nan,
                "lat": np.nan,
                "tau": self.taus,
                "sqte": self.average,
                "n_p": int(np.sum(self.n_p)),
            }
        )
        if self.sd is not None:
            reps = self.meta.get("replicates")
            loc["sd"] = self.sd.ravel()
            loc["lower"] = self.lower.ravel()
            loc["upper"] = self.upper.ravel()
            avg["sd"] = np.asarray(self.meta.get("average_sd", np.full(m, np.nan)))
            if reps is not None:
                means = reps.mean(axis=1)
                alpha = (1.0 - self.meta.get("level", 0.95)) / 2.0
                avg["lower"] = np.percentile(means, 100 * alpha, axis=0)
                avg["upper"] = np.percentile(means, 100 * (1 - alpha), axis=0)
            else:
                avg["lower"] = avg["upper"] = np.nan
        return pd.concat([loc, avg], ignore_index=True)


def estimate_surface(model, obs, taus):
    """Plug-in estimates at every location of ``obs`` for every level in ``taus``."""
    taus = check_levels(taus)
    locs, inv = obs.locations()
    gaps = counterfactual_gaps(model, obs.X, obs.coords, taus)
    counts = np.bincount(inv, minlength=len(locs))
    sums = np.zeros((len(locs), len(taus)))
    np.add.at(sums, inv, gaps)
    return SqteSurface(taus, locs, sums / counts[:, None], counts)


# --------------------------------------------------------------------------
# neighbourhood adjustment


@dataclass(frozen=True)
class AdjustmentConfig:
    """Settings for fitting on a neighbourhood of a reference point.

    ``coverage`` is the fraction of all rows the neighbourhood must hold.
    ``mode`` is ``"center"`` (one fit around the domain centre, applied to the
    whole domain) or ``"per_location"`` (a separate fit around every location).
    Distances are Euclidean on min-max scaled coordinates.
    """

    coverage: float = 0.2
    mode: str = "center"
    min_rows: int = 50
    reference: tuple = None

    def __post_init__(self):
        if not 0 < self.coverage <= 1:
            raise ConfigurationError(f"coverage must be in (0, 1], got {self.coverage}")
        if self.mode not in ("center", "per_location"):
            raise ConfigurationError(f"unknown adjustment mode {self.mode!r}")


#: coverage fractions for the sensitivity sweep
SENSITIVITY_COVERAGES = (0.1, 0.2, 0.5)


def _coord_bounds(obs):
    return obs.coords.min(axis=0), obs.coords.max(axis=0)


def _scaled(coords, bounds):
    lo, hi = bounds
    span = np.where(hi > lo, hi - lo, 1.0)
    return (np.asarray(coords, dtype=float) - lo) / span


def neighbourhood(obs, coverage, reference=None, bounds=None):
    """Row indices within the smallest radius holding ``ceil(coverage * n)`` rows.

    ``reference`` is given in scaled coordinates and defaults to the centre
    (0.5, 0.5). Rows tied at the cut-off distance are all kept, so whole
    location blocks enter together. Returns ``(indices, radius)``.
    """
    bounds = bounds or _coord_bounds(obs)
    s = _scaled(obs.coords, bounds)
    ref = np.array([0.5, 0.5]) if reference is None else np.asarray(reference, dtype=float)
    dist = np.sqrt(((s - ref) ** 2).sum(axis=1))
    k = max(1, math.ceil(coverage * len(obs) - 1e-9))
    radius = float(np.partition(dist, k - 1)[k - 1])
    return np.flatnonzero(dist <= radius), radius


def _subregion_bbox(scaled):
    lo, hi = scaled.min(axis=0), scaled.max(axis=0)
    ext = hi - lo
    if np.all(ext == 0):
        raise InsufficientDataError("neighbourhood covers a single location; increase coverage")
    # pad a degenerate side to the other side's extent
    ext = np.where(ext == 0, ext.max(), ext)
    hi = lo + ext
    return (tuple(lo), tuple(hi))


def neighborhood_adjusted_fit(obs, feature_spec, cfg, adj, reference=None):
    """Fit on the neighbourhood of a reference point, for use over the whole domain.

    Node lattices are rebuilt on the subregion's bounding box while the
    coordinate scaling stays that of the full data. The realised radius and
    subset size are stored in ``train_meta``.
    """
    bounds = _coord_bounds(obs)
    ref = reference if reference is not None else adj.reference
    idx, radius = neighbourhood(obs, adj.coverage, ref, bounds)
    if len(idx) < adj.min_rows:
        raise InsufficientDataError(
            f"neighbourhood holds {len(idx)} rows, fewer than the minimum {adj.min_rows}"
        )
    sub = obs.subset(idx)
    node_bbox = _subregion_bbox(_scaled(sub.coords, bounds)) if feature_spec.node_counts else None
    recipe = feature_spec.fit(sub, node_bbox=node_bbox, coord_bounds=bounds)
    meta = {
        "adjustment": {
            "coverage": adj.coverage,
            "mode": adj.mode,
            "radius": radius,
            "subset_size": int(len(idx)),
            "n_total": int(len(obs)),
            "reference": [0.5, 0.5] if ref is None else [float(v) for v in ref],
        }
    }
    return train(sub, recipe, cfg, extra_meta=meta)


def adjusted_surface(obs, feature_spec, cfg, adj, taus):
    """Effect surface under neighbourhood adjustment in either mode."""
    taus = check_levels(taus)
    if adj.mode == "center":
        model = neighborhood_adjusted_fit(obs, feature_spec, cfg, adj)
        surface = estimate_surface(model, obs, taus)
        surface.meta["adjustment"] = model.train_meta["adjustment"]
        return surface
    bounds = _coord_bounds(obs)
    locs, inv = obs.locations()
    est = np.empty((len(locs), len(taus)))
    for p, loc in enumerate(locs):
        model = neighborhood_adjusted_fit(obs, feature_spec, cfg, adj, reference=_scaled(loc, bounds))
        est[p] = sqte_at_location(model, LocationGroup(loc, obs.X[inv == p]), taus)
    return SqteSurface(taus, locs, est, np.bincount(inv, minlength=len(locs)), meta={"mode": adj.mode})


def fit_surface(obs, feature_spec, cfg, taus, adj=None):
    """Fit (optionally adjusted) and estimate the surface on ``obs``."""
    if adj is not None:
        return adjusted_surface(obs, feature_spec, cfg, adj, taus)
    model = train(obs, feature_spec.fit(obs), cfg)
    return estimate_surface(model, obs, taus)


# --------------------------------------------------------------------------
# bootstrap


def resample_within_locations(obs, rng):
    """Row indices drawn with replacement inside each location block."""
    _, inv = obs.locations()
    idx = []
    for p in range(inv.max() + 1):
        rows = np.flatnonzero(inv == p)
        idx.append(rng.choice(rows, size=len(rows), replace=True))
    return np.sort(np.concatenate(idx))


def bootstrap_ci(obs, feature_spec, cfg, B, taus, seed=0, adj=None, level=0.95):
    """Nonparametric bootstrap of the effect surface.

    Rows are resampled within each location; the model is refitted with the
    fixed ``cfg.seed`` so replicate variation comes from the data only.
    Returns the point-estimate surface with ``sd``, ``lower`` and ``upper``
    filled from the empirical percentiles of the ``B`` replicates.
    """
    if B < 2:
        raise ConfigurationError("bootstrap needs B >= 2")
    taus = check_levels(taus)
    point = fit_surface(obs, feature_spec, cfg, taus, adj)
    reps = np.empty((B,) + point.estimates.shape)
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        sample = obs.subset(resample_within_locations(obs, rng))
        reps[b] = fit_surface(sample, feature_spec, cfg, taus, adj).estimates
    alpha = (1.0 - level) / 2.0
    point.sd = reps.std(axis=0, ddof=1)
    point.lower = np.percentile(reps, 100 * alpha, axis=0)
    point.upper = np.percentile(reps, 100 * (1 - alpha), axis=0)
    point.meta["bootstrap_median"] = np.median(reps, axis=0)
    point.meta["average_sd"] = reps.mean(axis=1).std(axis=0, ddof=1)
    point.meta["replicates"] = reps
    point.meta["level"] = level
    return point
