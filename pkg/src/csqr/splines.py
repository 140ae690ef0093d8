"""Second-order M-spline and I-spline bases on the unit interval.

The basis follows Ramsay (1988): ``K`` functions of order 2 built on a knot
vector whose boundary knots are repeated ``order`` times and whose interior
knots are equally spaced. M-splines are nonnegative and integrate to one, so a
convex combination of them is a density on [0, 1]; I-splines are their running
integrals and the same combination of them is the matching CDF.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError

ORDER = 2


@dataclass(frozen=True)
class SplineGrid:
    """Knot layout for ``K`` order-2 basis functions on [0, 1]."""

    K: int
    knots: tuple
    order: int = ORDER

    @property
    def t(self):
        return np.asarray(self.knots, dtype=float)

    @property
    def spacing(self):
        """Width of one interior interval."""
        return 1.0 / (self.K - 1)

    @property
    def peak_values(self):
        """Value of each M_k at its own peak knot.

        With equally spaced knots M_k is a hat centred on the k-th distinct knot
        point; the two boundary functions are half hats with twice the height.
        """
        peaks = np.full(self.K, 1.0 / self.spacing)
        peaks[0] = peaks[-1] = 2.0 / self.spacing
        return peaks


def build_grid(K):
    """Return the uniform order-2 grid with ``K`` basis functions."""
    if int(K) != K or K < 2:
        raise ConfigurationError(f"need at least 2 spline basis functions, got K={K}")
    K = int(K)
    interior = [i / (K - 1) for i in range(1, K - 1)]
    knots = (0.0,) * ORDER + tuple(interior) + (1.0,) * ORDER
    return SplineGrid(K=K, knots=knots)


def _check_index(grid, k):
    if not 1 <= k <= grid.K:
        raise IndexError(f"basis index {k} outside 1..{grid.K}")


def _order1(t, y):
    """Order-1 M-splines (normalised indicators), shape (n, len(t) - 1).

    Intervals are right-open except the last nonempty one, which also holds
    y == t[-1] so the top boundary basis does not vanish at 1.
    """
    y = np.asarray(y, dtype=float)[:, None]
    lo, hi = t[:-1], t[1:]
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    inside = (y >= lo) & (y < hi)
    last = np.flatnonzero(width > 0)[-1]
    inside[:, last] |= y[:, 0] == hi[last]
    return np.where(inside & (width > 0), 1.0 / safe, 0.0)


def _m_matrix(t, y):
    y = np.asarray(y, dtype=float)
    m1 = _order1(t, y)
    left, right = t[:-2], t[2:]
    yy = y[:, None]
    out = ORDER * ((yy - left) * m1[:, :-1] + (right - yy) * m1[:, 1:]) / (right - left)
    return np.maximum(out, 0.0)


def _i_matrix(t, y):
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)[:, None]
    a, b, c = t[:-2], t[1:-1], t[2:]
    rising = np.where(b > a, (y - a) ** 2 / np.where(b > a, (b - a) * (c - a), 1.0), 0.0)
    falling = 1.0 - np.where(c > b, (c - y) ** 2 / np.where(c > b, (c - b) * (c - a), 1.0), 0.0)
    out = np.where(y <= a, 0.0, np.where(y >= c, 1.0, np.where(y < b, rising, falling)))
    return out


def eval_m(grid, k, y):
    """M_k(y) for 1-based index ``k``; zero outside [0, 1]."""
    _check_index(grid, k)
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    out = _m_matrix(grid.t, y_arr)[:, k - 1]
    return out[0] if np.ndim(y) == 0 else out


def eval_i(grid, k, y):
    """I_k(y) = integral of M_k from 0 to y; 0 below the unit interval, 1 above."""
    _check_index(grid, k)
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    out = _i_matrix(grid.t, y_arr)[:, k - 1]
    return out[0] if np.ndim(y) == 0 else out


def eval_all(grid, y):
    """Evaluate every basis function at once.

    Returns ``(m, i)`` with shape ``(len(y), K)`` (or ``(K,)`` for scalar y).
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    m = _m_matrix(grid.t, y_arr)
    i = _i_matrix(grid.t, y_arr)
    if np.ndim(y) == 0:
        return m[0], i[0]
    return m, i
