"""Train/test splits, RMISE metrics and replicate aggregation for simulations.

RMISE definitions used throughout:

* response, per location and level: ``sqrt(mean_i (qhat_i - q_i)^2)`` over
  the location's test rows, where ``q_i`` is the true conditional quantile of
  row ``i`` (hidden variables included);
* effect, per location and level: ``sqrt(mean_r (Dhat_r - D)^2)`` over
  simulation replicates ``r``.

Aggregates over replicates use the sample standard deviation (N - 1).
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd

from .causal import AdjustmentConfig, adjusted_surface, estimate_surface, neighborhood_adjusted_fit
from .exceptions import InsufficientDataError, UnsupportedOperationError
from .network import TrainConfig, train
from .quantiles import check_levels, quantile
from .simulate import TrueField, generate, true_quantile, true_sqte
from .spatial import variant_spec

logger = logging.getLogger(__name__)

DEFAULT_TAUS = np.round(np.arange(1, 20) * 0.05, 2)
MAP_TAU = 0.05
REPORT_COLUMNS = ["variant", "adjusted", "scenario", "tau", "lon", "lat", "metric", "mean", "sd", "n"]


@dataclass(frozen=True)
class ModelVariant:
    """One of the five feature layouts, optionally with neighbourhood adjustment."""

    id: int
    adjusted: bool = False

    @property
    def feature_spec(self):
        return variant_spec(self.id)

    @property
    def label(self):
        return f"Model {self.id}" + (" AD" if self.adjusted else "")


def split(obs, fraction=0.8, seed=0):
    """Stratified per-location split; returns ``(train_idx, test_idx)``.

    Each location with ``n_p`` rows sends ``round((1 - fraction) * n_p)`` rows
    to the test set. Locations with a single row stay in training.
    """
    if len(obs) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    _, inv = obs.locations()
    train_idx, test_idx = [], []
    singles = 0
    for p in range(inv.max() + 1):
        rows = np.flatnonzero(inv == p)
        if len(rows) < 2:
            singles += 1
            train_idx.append(rows)
            continue
        n_test = int(math.floor((1.0 - fraction) * len(rows) + 0.5 + 1e-9))
        perm = rng.permutation(rows)
        test_idx.append(np.sort(perm[:n_test]))
        train_idx.append(np.sort(perm[n_test:]))
    if singles:
        logger.warning("%d locations with fewer than 2 rows kept entirely in training", singles)
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx)) if test_idx else np.array([], int)


def rmise_response(model, test, taus, scenario):
    """Response RMISE per location and level, shape ``(P, n_tau)``.

    ``test`` must carry the oracle columns (h1, h2, h3). Locations are those
    of ``test`` in :meth:`Observations.locations` order.
    """
    if not all(k in test.extra for k in ("h1", "h2", "h3")):
        raise UnsupportedOperationError("response RMISE needs the hidden-variable oracle columns")
    taus = check_levels(taus)
    H = np.column_stack([test.extra[k] for k in ("h1", "h2", "h3")])
    qhat = quantile(model, taus, model.features(test.t, test.X, test.coords))
    qtrue = true_quantile(scenario, taus[None, :], test.t, test.X, H, test.coords)
    return _rms_by_location(test, (qhat - qtrue) ** 2)


def _rms_by_location(obs, sq):
    _, inv = obs.locations()
    P = inv.max() + 1
    sums = np.zeros((P, sq.shape[1]))
    np.add.at(sums, inv, sq)
    return np.sqrt(sums / np.bincount(inv, minlength=P)[:, None])


def rmise_sqte(estimates, truth):
    """Effect RMISE across replicates.

    ``estimates`` has shape ``(N, ...)`` (one slice per replicate) and
    ``truth`` broadcasts against a single slice.
    """
    err = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    return np.sqrt(np.mean(err**2, axis=0))


@dataclass
class Aggregate:
    mean: np.ndarray
    sd: np.ndarray
    n: int
    lower: np.ndarray
    upper: np.ndarray
    degenerate: bool = False


def aggregate(values):
    """Mean, sample sd and normal 95% interval over the leading (replicate) axis.

    With one replicate the sd is reported as 0 and ``degenerate`` is set.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n == 0:
        raise ValueError("no replicates to aggregate")
    mean = values.mean(axis=0)
    sd = values.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    half = 1.96 * sd / math.sqrt(n)
    return Aggregate(mean, sd, n, mean - half, mean + half, degenerate=n == 1)


# --------------------------------------------------------------------------
# replicate runs


@dataclass
class ReplicateResult:
    """Raw per-replicate output for one model variant."""

    variant: int
    adjusted: bool
    replicate: int
    locations: np.ndarray
    taus: np.ndarray
    response_rmise: np.ndarray
    sqte: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def sqte_error(self):
        return self.sqte - true_sqte(self.taus, self.locations)


def evaluate_variant(truth, obs, train_idx, test_idx, variant, cfg, taus, adj=None):
    """Fit one variant on the training rows and score it.

    Effects are estimated on all rows of each location (training and test),
    response quantiles on the test rows only.
    """
    train_obs, test_obs = obs.subset(train_idx), obs.subset(test_idx)
    spec = variant.feature_spec
    if variant.adjusted:
        adj = adj or AdjustmentConfig()
        if adj.mode == "center":
            model = neighborhood_adjusted_fit(train_obs, spec, cfg, adj)
            surface = estimate_surface(model, obs, taus)
        else:
            surface = adjusted_surface(train_obs, spec, cfg, adj, taus)
            model = None
    else:
        model = train(train_obs, spec.fit(train_obs), cfg)
        surface = estimate_surface(model, obs, taus)
    if model is None:
        resp = np.full((len(surface.locations), len(taus)), np.nan)
    else:
        resp = rmise_response(model, test_obs, taus, truth.scenario)
    meta = dict(model.train_meta.get("adjustment", {})) if model is not None else {}
    if model is not None:
        meta["final_nll"] = model.train_meta["final_nll"]
    return ReplicateResult(variant.id, variant.adjusted, -1, surface.locations, taus, resp, surface.estimates, meta)


def evaluate_field(truth, replicate, seed, variants, cfg, taus=DEFAULT_TAUS, adj=None, fraction=0.8):
    """Evaluate every variant on one replicate, all sharing the same split."""
    taus = check_levels(taus)
    obs = truth.observations()
    split_seed = np.random.SeedSequence([int(seed), int(replicate), 1])
    train_idx, test_idx = split(obs, fraction, seed=split_seed)
    out = []
    for variant in variants:
        fit_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + 1000 * replicate + variant.id})
        res = evaluate_variant(truth, obs, train_idx, test_idx, variant, fit_cfg, taus, adj)
        res.replicate = replicate
        out.append(res)
    return out


def run_replicate(spec, replicate, variants, cfg, taus=DEFAULT_TAUS, adj=None, fraction=0.8):
    """Generate one replicate and evaluate every variant on the same split."""
    return evaluate_field(generate(spec, replicate), replicate, spec.seed, variants, cfg, taus, adj, fraction)


def _study_task(args):
    return run_replicate(*args)


def run_study(spec, variants, cfg, taus=DEFAULT_TAUS, adj=None, replicates=None, workers=1, progress=None):
    """All replicates of ``spec`` (or the listed ``replicates``) for every variant.

    With ``workers > 1`` replicates run in a process pool; results are
    collected in replicate order so output does not depend on scheduling.
    """
    reps = list(range(spec.replicates) if replicates is None else replicates)
    if not reps:
        raise InsufficientDataError("empty replicate set")
    tasks = [(spec, r, variants, cfg, taus, adj) for r in reps]
    results = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r, res in zip(reps, pool.map(_study_task, tasks)):
                results.extend(res)
                if progress:
                    progress(r)
        return results
    for r, task in zip(reps, tasks):
        results.extend(_study_task(task))
        if progress:
            progress(r)
    return results


def fields_from_frame(frame, scenario):
    """Split an oracle-bearing simulation table into per-replicate fields."""
    missing = [c for c in ("h1", "h2", "h3") if c not in frame.columns]
    if missing:
        raise UnsupportedOperationError(
            f"evaluation needs the oracle columns, missing {', '.join(missing)}; simulate with --with-oracle"
        )
    if len(frame) == 0:
        raise InsufficientDataError("empty replicate set")
    if "rep" not in frame.columns:
        return [(0, TrueField(scenario, frame.reset_index(drop=True), 0))]
    return [
        (int(r), TrueField(scenario, g.reset_index(drop=True), 0))
        for r, g in frame.groupby("rep", sort=True)
    ]


# --------------------------------------------------------------------------
# reporting


def report_frame(results, scenario):
    """Long-format report over replicates, grouped by variant.

    Metrics per location: ``response_rmise`` (mean/sd over replicates of the
    per-replicate RMISE) and ``sqte_rmise`` (mean column holds the RMISE
    across replicates, sd the sample sd of |error|). Spatial-average rows
    (empty lon/lat) carry ``response_rmise`` averaged over locations and
    ``sqte_rmise`` as root-mean over locations, each summarised across
    replicates; ``n`` is the replicate count.
    """
    if not results:
        raise ValueError("no replicate results to report")
    rows = []
    keys = sorted({(r.variant, r.adjusted) for r in results})
    for variant, adjusted in keys:
        group = sorted((r for r in results if (r.variant, r.adjusted) == (variant, adjusted)), key=lambda r: r.replicate)
        taus, locs = group[0].taus, group[0].locations
        resp = np.stack([r.response_rmise for r in group])
        err = np.stack([r.sqte_error for r in group])
        n = len(group)
        resp_agg = aggregate(resp)
        abs_agg = aggregate(np.abs(err))
        sq_rmise = rmise_sqte(err, 0.0)
        for p, (lon, lat) in enumerate(locs):
            for j, tau in enumerate(taus):
                base = (variant, adjusted, scenario, tau, lon, lat)
                rows.append(base + ("response_rmise", resp_agg.mean[p, j], resp_agg.sd[p, j], n))
                rows.append(base + ("sqte_rmise", sq_rmise[p, j], abs_agg.sd[p, j], n))
        curve_resp = aggregate(resp.mean(axis=1))
        curve_sqte = aggregate(np.sqrt((err**2).mean(axis=1)))
        for j, tau in enumerate(taus):
            base = (variant, adjusted, scenario, tau, np.nan, np.nan)
            rows.append(base + ("response_rmise", curve_resp.mean[j], curve_resp.sd[j], n))
            rows.append(base + ("sqte_rmise", curve_sqte.mean[j], curve_sqte.sd[j], n))
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def sensitivity_frame(results_by_coverage, scenario):
    """Stack reports from a coverage sweep; unadjusted runs use coverage 0."""
    frames = []
    for coverage, results in results_by_coverage.items():
        f = report_frame(results, scenario)
        f.insert(2, "coverage", float(coverage))
        frames.append(f)
    if not frames:
        raise ValueError("no coverage fractions to report")
    return pd.concat(frames, ignore_index=True)
