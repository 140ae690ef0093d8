"""Conditional density, CDF and quantile function of a fitted model.

All functions take feature rows ``F`` (as built by the model's recipe).
Responses are in original units; the model's scaler handles the mapping onto
the spline axis, and densities include its Jacobian.
"""

import numpy as np

from .exceptions import NumericError
from .network import forward
from .splines import eval_all

BISECTION_STEPS = 60


def _theta_for(model, F, y):
    theta = forward(model.params, F)
    if theta.ndim == 1:
        return theta
    if y.ndim == 0 or y.shape[0] != theta.shape[0]:
        raise ValueError("y must have one leading entry per feature row")
    return theta.reshape((theta.shape[0],) + (1,) * (y.ndim - 1) + (theta.shape[1],))


def _check_y(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite response value")
    return y


def pdf(model, y, F):
    """Conditional density f(y | x) in response units.

    With a single feature row ``F`` (1-D) any shape of ``y`` is accepted;
    with ``n`` rows, ``y`` must have leading dimension ``n``.
    """
    y = _check_y(y)
    theta = _theta_for(model, F, y)
    m, _ = eval_all(model.grid, model.scaler.transform(y.ravel()))
    m = np.atleast_2d(m).reshape(y.shape + (model.K,))
    return (m * theta).sum(axis=-1) * model.scaler.jacobian(y)


def cdf(model, y, F):
    """Conditional CDF F(y | x); 0 below the scaler support and 1 above it."""
    y = _check_y(y)
    theta = _theta_for(model, F, y)
    _, i = eval_all(model.grid, model.scaler.transform(y.ravel()))
    i = np.atleast_2d(i).reshape(y.shape + (model.K,))
    return np.clip((i * theta).sum(axis=-1), 0.0, 1.0)


def _knot_tables(grid, theta):
    """Mixture density and CDF at the distinct knots for every row of theta.

    The order-2 mixture density is piecewise linear with value
    ``theta_k * peak_k`` at the k-th distinct knot, so its CDF at the knots is
    a cumulative trapezoid sum.
    """
    h = grid.spacing
    dens = theta * grid.peak_values
    steps = 0.5 * h * (dens[:, :-1] + dens[:, 1:])
    cum = np.concatenate([np.zeros((len(theta), 1)), np.cumsum(steps, axis=1)], axis=1)
    return dens, cum


def scaled_quantile(grid, theta, tau):
    """Quantiles on the spline axis, shape ``(n_rows, n_tau)``.

    Locates the knot interval holding each level, then bisects the local
    quadratic CDF on that interval.
    """
    theta = np.atleast_2d(theta)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    h = grid.spacing
    dens, cum = _knot_tables(grid, theta)
    # interval index j with cum[j] <= tau < cum[j+1]
    j = (cum[:, None, 1:-1] <= tau[None, :, None]).sum(axis=2)
    rows = np.arange(len(theta))[:, None]
    base = cum[rows, j]
    f0 = dens[rows, j]
    slope = (dens[rows, j + 1] - f0) / h
    target = tau[None, :] - base
    lo = np.zeros_like(target)
    hi = np.full_like(target, h)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        below = f0 * mid + 0.5 * slope * mid * mid < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.clip(j * h + 0.5 * (lo + hi), 0.0, 1.0)


def check_levels(tau):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(~(tau > 0) | ~(tau < 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    return tau


def quantile(model, tau, F):
    """Conditional quantiles q(tau | x) in response units.

    Returns shape ``(n_rows, n_tau)``; a scalar ``tau`` with a single 1-D
    feature row gives a float.
    """
    scalar = np.ndim(tau) == 0 and np.ndim(F) == 1
    tau = check_levels(tau)
    theta = np.atleast_2d(forward(model.params, F))
    out = model.scaler.inverse(scaled_quantile(model.grid, theta, tau))
    return float(out[0, 0]) if scalar else out
