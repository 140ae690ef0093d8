"""Softmax-weighted spline mixture density and its maximum-likelihood fit.

A feed-forward ReLU network maps each feature row to mixture weights
``theta`` on the probability simplex; the conditional density of the scaled
response is ``sum_k theta_k M_k(z)``. Training minimises the mean negative
log-likelihood with Adam on shuffled mini-batches.
"""

from dataclasses import dataclass, field
import json
import logging

import numpy as np

from .exceptions import (
    CompatibilityError,
    ConfigurationError,
    DivergedTrainingError,
    NumericError,
    ShapeError,
)
from .splines import SplineGrid, build_grid, eval_all

logger = logging.getLogger(__name__)

FORMAT_TAG = "csqr-v1"
LIKELIHOOD_FLOOR = 1e-12


# --------------------------------------------------------------------------
# response scaling


class ResponseScaler:
    """Monotone piecewise-linear map from response units onto [0, 1].

    The map interpolates between ``y_knots`` and ``z_knots`` and extends the
    two end segments linearly until they reach 0 and 1; beyond that it is
    clamped. Conditional quantiles commute with any increasing map, so
    quantiles found on the scaled axis are pulled back exactly by
    :meth:`inverse`.

    Two constructors are provided. :meth:`minmax` is the plain affine map of
    ``[min(y), max(y)]`` onto ``[margin, 1 - margin]``. :meth:`quantile`
    places knots at empirical quantiles of the training responses, which keeps
    the spline grid usable when the response has extreme tails.
    """

    def __init__(self, y_knots, z_knots, kind="custom"):
        y_knots = np.asarray(y_knots, dtype=float)
        z_knots = np.asarray(z_knots, dtype=float)
        if y_knots.shape != z_knots.shape or len(y_knots) < 2:
            raise ConfigurationError("scaler needs at least two matching knots")
        if np.any(np.diff(y_knots) <= 0) or np.any(np.diff(z_knots) <= 0):
            raise ConfigurationError("scaler knots must be strictly increasing")
        if z_knots[0] < 0 or z_knots[-1] > 1:
            raise ConfigurationError("scaled knots must lie in [0, 1]")
        self.y_knots = y_knots
        self.z_knots = z_knots
        self.kind = kind
        lo_slope = (z_knots[1] - z_knots[0]) / (y_knots[1] - y_knots[0])
        hi_slope = (z_knots[-1] - z_knots[-2]) / (y_knots[-1] - y_knots[-2])
        y_lo = y_knots[0] - z_knots[0] / lo_slope
        y_hi = y_knots[-1] + (1.0 - z_knots[-1]) / hi_slope
        self._y = np.concatenate([[y_lo], y_knots, [y_hi]])
        self._z = np.concatenate([[0.0], z_knots, [1.0]])
        # drop zero-width end segments (z knot already at 0 or 1)
        keep = np.concatenate([[True], np.diff(self._y) > 0])
        self._y, self._z = self._y[keep], self._z[keep]
        self._slopes = np.diff(self._z) / np.diff(self._y)

    @classmethod
    def minmax(cls, y, margin=0.01):
        y = np.asarray(y, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        if not hi > lo:
            raise ConfigurationError("need at least two distinct response values")
        return cls([lo, hi], [margin, 1.0 - margin], kind="minmax")

    @classmethod
    def quantile(cls, y, n_knots=101, margin=0.01):
        y = np.asarray(y, dtype=float)
        if not np.max(y) > np.min(y):
            raise ConfigurationError("need at least two distinct response values")
        probs = np.linspace(0.0, 1.0, n_knots)
        knots = np.quantile(y, probs)
        keep = np.concatenate([[True], np.diff(knots) > 0])
        return cls(knots[keep], margin + (1.0 - 2.0 * margin) * probs[keep], kind="quantile")

    @property
    def support(self):
        """Response interval mapped onto [0, 1]."""
        return float(self._y[0]), float(self._y[-1])

    @property
    def y_min(self):
        return float(self.y_knots[0])

    @property
    def y_max(self):
        return float(self.y_knots[-1])

    def transform(self, y):
        return np.interp(y, self._y, self._z)

    def inverse(self, z):
        return np.interp(z, self._z, self._y)

    def jacobian(self, y):
        """dz/dy; zero outside the support."""
        y = np.asarray(y, dtype=float)
        idx = np.clip(np.searchsorted(self._y, y, side="right") - 1, 0, len(self._slopes) - 1)
        inside = (y >= self._y[0]) & (y <= self._y[-1])
        return np.where(inside, self._slopes[idx], 0.0)

    def to_dict(self):
        return {
            "kind": self.kind,
            "y_knots": [float(v) for v in self.y_knots],
            "z_knots": [float(v) for v in self.z_knots],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["y_knots"], d["z_knots"], d.get("kind", "custom"))


def fit_scaler(y, kind="quantile", margin=0.01):
    if kind == "minmax":
        return ResponseScaler.minmax(y, margin)
    if kind == "quantile":
        return ResponseScaler.quantile(y, margin=margin)
    raise ConfigurationError(f"unknown scaler kind {kind!r}")


# --------------------------------------------------------------------------
# network


@dataclass
class NetworkParams:
    """Layer weights ``W`` (out x in) and biases ``b`` for a ReLU MLP."""

    weights: list
    biases: list

    @property
    def n_inputs(self):
        return self.weights[0].shape[1]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self):
        return [self.n_inputs] + [w.shape[0] for w in self.weights]

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, vector):
        """Copy with all parameters replaced from a flat vector (same order as :meth:`flat`)."""
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vector[pos : pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vector[pos : pos + b.size].copy())
            pos += b.size
        return NetworkParams(weights, biases)

    def with_views(self, buffer):
        """Same layout, with every array a view into ``buffer``."""
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(buffer[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(buffer[pos : pos + b.size])
            pos += b.size
        return NetworkParams(weights, biases)

    def to_dict(self):
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        weights = [np.asarray(w, dtype=float).reshape(len(w), -1) for w in d["weights"]]
        return cls(weights, [np.asarray(b, dtype=float) for b in d["biases"]])


def init_params(layer_sizes, rng):
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def _check_input(params, F):
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[None, :]
    if F.shape[1] != params.n_inputs:
        raise ShapeError(f"feature length {F.shape[1]} does not match network input {params.n_inputs}")
    if not np.all(np.isfinite(F)):
        raise NumericError("non-finite feature values")
    return F


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params, F):
    acts = [F]
    h = F
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W.T + b
        h = a if i == last else np.maximum(a, 0.0)
        acts.append(h)
    return acts


def logits(params, F):
    """Final-layer outputs before the softmax."""
    return _forward_cache(params, _check_input(params, F))[-1]


def forward(params, F):
    """Mixture weights theta for feature rows ``F``; each row sums to one."""
    single = np.ndim(F) == 1
    theta = softmax(logits(params, F))
    return theta[0] if single else theta


def _loss_and_grad(params, M, F, need_grad=True):
    acts = _forward_cache(params, F)
    theta = softmax(acts[-1])
    dens = np.einsum("nk,nk->n", theta, M) + LIKELIHOOD_FLOOR
    loss = -np.mean(np.log(dens))
    if not need_grad:
        return loss, None
    n = len(F)
    # d(-log f)/dz_k = -theta_k (M_k - f) / (f + eps)
    f = dens - LIKELIHOOD_FLOOR
    delta = -theta * (M - f[:, None]) / dens[:, None] / n
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (acts[i] > 0)
    return loss, NetworkParams(gw, gb)


# --------------------------------------------------------------------------
# fitted model


@dataclass
class TrainConfig:
    """Hyperparameters for :func:`train`. ``seed`` drives init and shuffling."""

    seed: int
    K: int = 10
    hidden: tuple = (32, 32)
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scaler: str = "quantile"
    margin: float = 0.01

    def validate(self):
        if self.seed is None:
            raise ConfigurationError("a seed is required")
        if self.K < 2:
            raise ConfigurationError("K must be at least 2")
        if any(h <= 0 for h in self.hidden):
            raise ConfigurationError("hidden layer sizes must be positive")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigurationError("learning rate and batch size must be positive, epochs >= 0")
        if not 0 <= self.margin < 0.5:
            raise ConfigurationError("margin must be in [0, 0.5)")

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class QuantileModel:
    params: NetworkParams
    grid: SplineGrid
    recipe: object
    scaler: ResponseScaler
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.params.n_outputs != self.grid.K:
            raise ShapeError("network output width does not match the spline grid")
        if self.params.n_inputs != self.recipe.n_features:
            raise ShapeError("network input width does not match the feature recipe")

    @property
    def K(self):
        return self.grid.K

    def features(self, t, X, coords):
        return self.recipe.build(t, X, coords)

    def theta(self, F):
        return forward(self.params, F)

    def to_dict(self):
        return {
            "format": FORMAT_TAG,
            "grid": {"K": self.grid.K, "order": self.grid.order},
            "recipe": self.recipe.to_dict(),
            "scaler": self.scaler.to_dict(),
            "params": self.params.to_dict(),
            "train_meta": self.train_meta,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        from .spatial import FeatureRecipe

        if d.get("format") != FORMAT_TAG:
            raise CompatibilityError(f"unsupported model format {d.get('format')!r}, expected {FORMAT_TAG}")
        if d["recipe"].get("treatment") != "t":
            raise CompatibilityError("model was not trained with a treatment column")
        return cls(
            params=NetworkParams.from_dict(d["params"]),
            grid=build_grid(d["grid"]["K"]),
            recipe=FeatureRecipe.from_dict(d["recipe"]),
            scaler=ResponseScaler.from_dict(d["scaler"]),
            train_meta=d.get("train_meta", {}),
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _scaled_basis(model, y):
    z = model.scaler.transform(np.asarray(y, dtype=float))
    m, _ = eval_all(model.grid, z)
    return np.atleast_2d(m)


def nll(model, y, F):
    """Mean negative log-likelihood of responses ``y`` (response units) on the scaled axis."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(y) == 0:
        raise ValueError("empty batch")
    F = _check_input(model.params, F)
    loss, _ = _loss_and_grad(model.params, _scaled_basis(model, y), F, need_grad=False)
    return float(loss)


def grad_nll(model, y, F):
    """Analytic gradient of :func:`nll` as a :class:`NetworkParams`."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(y) == 0:
        raise ValueError("empty batch")
    F = _check_input(model.params, F)
    _, grads = _loss_and_grad(model.params, _scaled_basis(model, y), F)
    return grads


class _Adam:
    """Adam over one flat parameter buffer that the network arrays view into."""

    def __init__(self, params, cfg):
        self.cfg = cfg
        self.buffer = params.flat()
        shared = params.with_views(self.buffer)
        params.weights, params.biases = shared.weights, shared.biases
        self.m = np.zeros_like(self.buffer)
        self.v = np.zeros_like(self.buffer)
        self.step = 0

    def update(self, grads):
        cfg = self.cfg
        self.step += 1
        g = grads.flat()
        self.m *= cfg.beta1
        self.m += (1.0 - cfg.beta1) * g
        self.v *= cfg.beta2
        self.v += (1.0 - cfg.beta2) * g * g
        c1 = 1.0 - cfg.beta1**self.step
        c2 = 1.0 - cfg.beta2**self.step
        self.buffer -= cfg.learning_rate * (self.m / c1) / (np.sqrt(self.v / c2) + cfg.eps)


def train(data, recipe, cfg, extra_meta=None):
    """Fit a :class:`QuantileModel` to ``data`` (an :class:`~csqr.data.Observations`).

    The scaler is fitted on ``data.y``; the feature recipe must already be
    fitted. Runs ``cfg.epochs`` passes of Adam over shuffled mini-batches and
    records the full-data NLL after every epoch.
    """
    cfg.validate()
    y = np.asarray(data.y, dtype=float)
    if len(np.unique(y)) < 2:
        raise ConfigurationError("need at least two distinct response values")
    scaler = fit_scaler(y, cfg.scaler, cfg.margin)
    grid = build_grid(cfg.K)
    F = recipe.build(data.t, data.X, data.coords)
    if not np.all(np.isfinite(F)):
        raise NumericError("non-finite features")
    M, _ = eval_all(grid, scaler.transform(y))
    M = np.atleast_2d(M)

    rng = np.random.default_rng(cfg.seed)
    params = init_params([F.shape[1], *cfg.hidden, cfg.K], rng)
    opt = _Adam(params, cfg)
    initial, _ = _loss_and_grad(params, M, F, need_grad=False)
    history = [float(initial)]
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = _loss_and_grad(params, M[idx], F[idx])
            if not np.isfinite(loss):
                raise DivergedTrainingError(epoch, float(loss))
            opt.update(grads)
        loss, _ = _loss_and_grad(params, M, F, need_grad=False)
        if not np.isfinite(loss):
            raise DivergedTrainingError(epoch, float(loss))
        history.append(float(loss))
    logger.debug("trained %d epochs, nll %.5f -> %.5f", cfg.epochs, history[0], history[-1])
    meta = {
        "seed": int(cfg.seed),
        "epochs": int(cfg.epochs),
        "config": cfg.to_dict(),
        "initial_nll": history[0],
        "final_nll": history[-1],
        "nll_history": history,
        "n_train": int(n),
    }
    if extra_meta:
        meta.update(extra_meta)
    return QuantileModel(params, grid, recipe, scaler, meta)
