"""Data generation for the three simulation scenarios.

Scenario 1 has no confounding (treatment probability 0.5), scenario 2 is
confounded by the observed covariates X1 and X6, and scenario 3 by the hidden
spatial surface H3. Responses are drawn by inverse-transform sampling: a
uniform level U is stored per row and ``Y = q_Y(U | T, X, H, s)``.
"""

from dataclasses import asdict, dataclass
import logging

import numpy as np
import pandas as pd
from scipy.special import expit, ndtri

from .data import Observations
from .exceptions import ConfigurationError, NumericError

logger = logging.getLogger(__name__)

SCENARIOS = {1: "unconfounded", 2: "observed_confounders", 3: "hidden_confounders"}
COVARIATE_RANGES = (0.1, 0.2, 0.5)  # GP ranges for X4, X5, X6
HIDDEN_RANGE = 0.4  # GP range for H2
JITTER_START, JITTER_MAX = 1e-8, 1e-4
MONOTONE_GRID = np.linspace(0.01, 0.99, 99)


def scenario_id(scenario):
    if isinstance(scenario, str):
        if scenario.isdigit():
            scenario = int(scenario)
        else:
            names = {v: k for k, v in SCENARIOS.items()}
            if scenario not in names:
                raise ConfigurationError(f"unknown scenario {scenario!r}")
            scenario = names[scenario]
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"scenario must be one of 1, 2, 3; got {scenario}")
    return int(scenario)


@dataclass(frozen=True)
class ScenarioSpec:
    """Full description of one simulation design.

    ``treatment_level`` chooses whether T is drawn once per location or per
    row. ``None`` picks the scenario default: per row for scenarios 1 and 2
    (scenario 1 treatment is non-spatial; scenario 2 depends on row-level
    covariates) and per location for scenario 3, whose probability depends
    on the location only.
    """

    scenario: int = 1
    grid: int = 20
    n: int = 1000
    replicates: int = 100
    seed: int = 0
    treatment_level: str = None

    def __post_init__(self):
        object.__setattr__(self, "scenario", scenario_id(self.scenario))
        if self.grid < 2 or self.n < 1 or self.replicates < 1:
            raise ConfigurationError("grid side must be >= 2, n >= 1 and replicates >= 1")
        if self.treatment_level not in (None, "location", "row"):
            raise ConfigurationError(f"treatment_level must be 'location' or 'row', got {self.treatment_level!r}")
        if self.scenario == 2 and self.treatment_level == "location":
            raise ConfigurationError("scenario 2 treatment depends on row covariates; use 'row'")

    @property
    def level(self):
        if self.treatment_level is not None:
            return self.treatment_level
        return "location" if self.scenario == 3 else "row"

    @property
    def n_locations(self):
        return self.grid * self.grid

    def locations(self):
        side = np.linspace(0.0, 1.0, self.grid)
        lon, lat = np.meshgrid(side, side, indexing="ij")
        return np.column_stack([lon.ravel(), lat.ravel()])

    def rng(self, replicate):
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), int(replicate)]))

    def to_dict(self):
        d = asdict(self)
        d["treatment_level"] = self.level
        return d


# --------------------------------------------------------------------------
# Gaussian processes


def se_covariance(locs, length_scale):
    """Squared-exponential covariance exp(-(h / lambda)^2) between locations."""
    locs = np.asarray(locs, dtype=float)
    diff = locs[:, None, :] - locs[None, :, :]
    h2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-h2 / length_scale**2)


def gp_factor(locs, length_scale):
    """Lower Cholesky factor of the jittered covariance and the jitter used.

    Jitter starts at 1e-8 and grows tenfold up to 1e-4.
    """
    if not length_scale > 0:
        raise ConfigurationError("GP range must be positive")
    cov = se_covariance(locs, length_scale)
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            L = np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError(f"covariance with range {length_scale} not positive definite even with jitter {JITTER_MAX}")


def sample_gp(locs, length_scale, rng, size=1):
    """``size`` independent zero-mean GP draws at ``locs``; shape ``(size, n_locs)``."""
    L, _ = gp_factor(locs, length_scale)
    z = rng.standard_normal((len(locs), size))
    return (L @ z).T


# --------------------------------------------------------------------------
# true model


def hidden_surface(s):
    """Deterministic hidden confounder H3(s) = sin(5 pi s1) + cos(2 pi s2)."""
    s = np.atleast_2d(s)
    return np.sin(5 * np.pi * s[:, 0]) + np.cos(2 * np.pi * s[:, 1])


def true_sqte(tau, s):
    """Delta(tau, s) = 2 s1 (tau - 1/2)^2, the same in every scenario.

    ``s`` is one point or an ``(n, 2)`` array; with both ``s`` and ``tau``
    vector-valued the result is ``(n, n_tau)``.
    """
    s1 = np.asarray(s, dtype=float)[..., 0]
    tau = np.asarray(tau, dtype=float)
    if s1.ndim and tau.ndim:
        return 2.0 * s1[:, None] * (tau[None, :] - 0.5) ** 2
    return 2.0 * s1 * (tau - 0.5) ** 2


def true_quantile(scenario, tau, t, X, H, s):
    """True conditional quantile q_Y(tau | T, X, H, s).

    Row arguments have leading length ``n``. ``tau`` may be a scalar, an
    ``(n,)`` vector (one level per row) or an ``(n, m)`` / ``(1, m)`` grid.
    """
    scenario = scenario_id(scenario)
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0) | ~(tau < 1)):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s = np.atleast_2d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))

    def col(a):
        return a[:, None] if tau.ndim == 2 else a

    x1, x2, x3, x4, x5, x6 = (col(X[:, j]) for j in range(6))
    s1, s2 = col(s[:, 0]), col(s[:, 1])
    q = (
        3 * (tau - 0.5) * (x1 + 0.6) ** 3
        + 5 * (x2 + 4 * (x2 - 0.5) ** 2) * np.exp(-(x2**2))
        + 2 * np.exp((x3 + 0.5) ** 2 * (x4 - 0.5) ** 2)
        + 6 * (tau - 1) * (x5 + 0.4)
        + 5 * (x6 + 0.5) ** 2
        + 2 * s1 * (tau - 0.5) ** 2 * col(t)
        + np.sin(2 * np.pi * s1)
        + np.cos(3 * np.pi * s2)
        + ndtri(tau)
    )
    if scenario == 3:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        h1, h2, h3 = (col(H[:, j]) for j in range(3))
        q = q + 3 * h1**2 + 3 * h2 + 5 * h3
    return q


def treatment_probability(scenario, X, H):
    scenario = scenario_id(scenario)
    if scenario == 1:
        return np.full(len(X), 0.5)
    if scenario == 2:
        return expit(X[:, 0] + X[:, 5])
    return expit(5 * H[:, 2])


def monotone_violations(scenario, t, X, H, s, grid=MONOTONE_GRID):
    """Boolean mask of rows whose true quantile curve decreases on ``grid``."""
    q = true_quantile(scenario, grid[None, :], t, X, H, s)
    return np.any(np.diff(q, axis=1) < 0, axis=1)


# --------------------------------------------------------------------------
# generation


@dataclass
class TrueField:
    """One simulated replicate: the data table plus the generating scenario."""

    scenario: int
    frame: pd.DataFrame
    n_nonmonotone: int

    @property
    def X(self):
        return self.frame[[f"x{j}" for j in range(1, 7)]].to_numpy()

    @property
    def H(self):
        return self.frame[["h1", "h2", "h3"]].to_numpy()

    @property
    def coords(self):
        return self.frame[["lon", "lat"]].to_numpy()

    def quantile(self, tau, t=None, rows=None):
        """True quantiles for selected rows, optionally with T overridden."""
        f = self.frame if rows is None else self.frame.iloc[rows]
        tt = f["t"].to_numpy() if t is None else np.broadcast_to(np.asarray(t, dtype=float), len(f))
        X = f[[f"x{j}" for j in range(1, 7)]].to_numpy()
        H = f[["h1", "h2", "h3"]].to_numpy()
        return true_quantile(self.scenario, tau, tt, X, H, f[["lon", "lat"]].to_numpy())

    def observations(self):
        return Observations.from_frame(self.frame, covariates=[f"x{j}" for j in range(1, 7)])


def gen_covariates(spec, rng, locs):
    """X1..X6 for every (location, slot) row, location-major order."""
    n_s, n = len(locs), spec.n
    rows = n_s * n
    X = np.empty((rows, 6))
    X[:, 0] = rng.uniform(0.0, 1.0, rows)
    X[:, 1] = rng.standard_normal(rows)
    X[:, 2] = rng.binomial(1, 0.5, rows)
    for j, lam in enumerate(COVARIATE_RANGES):
        fields = sample_gp(locs, lam, rng, size=n)  # (n, n_s): one field per slot
        X[:, 3 + j] = fields.T.ravel()
    return X


def gen_hidden(spec, rng, locs):
    n_s, n = len(locs), spec.n
    H = np.empty((n_s * n, 3))
    H[:, 0] = rng.standard_normal(n_s * n)
    H[:, 1] = sample_gp(locs, HIDDEN_RANGE, rng, size=n).T.ravel()
    H[:, 2] = np.repeat(hidden_surface(locs), n)
    return H


def assign_treatment(spec, rng, X, H, locs):
    if spec.level == "location":
        loc_H = np.column_stack([np.zeros(len(locs)), np.zeros(len(locs)), hidden_surface(locs)])
        p = treatment_probability(spec.scenario, np.zeros((len(locs), 6)), loc_H)
        return np.repeat(rng.binomial(1, p), spec.n).astype(float)
    p = treatment_probability(spec.scenario, X, H)
    return rng.binomial(1, p).astype(float)


def generate(spec, replicate=0):
    """Simulate replicate ``replicate`` of ``spec``; a pure function of both."""
    rng = spec.rng(replicate)
    locs = spec.locations()
    s = np.repeat(locs, spec.n, axis=0)
    X = gen_covariates(spec, rng, locs)
    H = gen_hidden(spec, rng, locs)
    t = assign_treatment(spec, rng, X, H, locs)
    u = rng.uniform(0.0, 1.0, len(s))
    # U == 0 has probability zero but would hit ndtri(0) = -inf
    u = np.clip(u, np.finfo(float).tiny, None)
    y = true_quantile(spec.scenario, u, t, X, H, s)
    bad = int(monotone_violations(spec.scenario, t, X, H, s).sum())
    if bad:
        logger.info(
            "scenario %d replicate %d: %d of %d rows have a non-monotone true quantile curve",
            spec.scenario, replicate, bad, len(s),
        )
    frame = pd.DataFrame({"rep": replicate, "lon": s[:, 0], "lat": s[:, 1], "y": y, "t": t})
    for j in range(6):
        frame[f"x{j + 1}"] = X[:, j]
    for j in range(3):
        frame[f"h{j + 1}"] = H[:, j]
    frame["u"] = u
    return TrueField(spec.scenario, frame, bad)


def sample_response(scenario, t, X, H, s, rng):
    """Inverse-transform draw for given rows: returns ``(U, Y)``."""
    u = np.clip(rng.uniform(0.0, 1.0, len(np.atleast_1d(t))), np.finfo(float).tiny, None)
    return u, true_quantile(scenario, u, t, X, H, s)


def export_frame(field, with_oracle=False):
    cols = ["rep", "lon", "lat", "y", "t"] + [f"x{j}" for j in range(1, 7)]
    if with_oracle:
        cols += ["h1", "h2", "h3", "u"]
    return field.frame[cols]
