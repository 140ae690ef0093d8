"""Multi-resolution Wendland radial-basis features for 2-D coordinates."""

from dataclasses import dataclass, field
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, ShapeError

#: bandwidth = factor * lattice spacing (DeepKriging guideline)
BANDWIDTH_FACTOR = 2.5
UNIT_BBOX = ((0.0, 0.0), (1.0, 1.0))


def wendland(h):
    """Wendland C4 function (1-h)^6 (35h^2 + 18h + 3) / 3 on [0, 1], zero beyond."""
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0):
        raise ValueError("scaled distance must be nonnegative")
    inside = h_arr < 1.0
    hc = np.where(inside, h_arr, 1.0)
    out = np.where(inside, (1.0 - hc) ** 6 * (35.0 * hc**2 + 18.0 * hc + 3.0) / 3.0, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NodeGrid:
    """A square lattice of ``p`` nodes with one shared bandwidth."""

    nodes: np.ndarray = field(repr=False)
    bandwidth: float
    resolution: int = 1

    @property
    def p(self):
        return len(self.nodes)

    def to_dict(self):
        return {
            "resolution": self.resolution,
            "bandwidth": float(self.bandwidth),
            "nodes": [[float(a), float(b)] for a, b in self.nodes],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["nodes"], dtype=float), float(d["bandwidth"]), int(d["resolution"]))


def lattice_side(p):
    side = math.isqrt(int(p))
    if side * side != p or side < 2:
        raise ConfigurationError(f"node count must be a perfect square >= 4, got {p}")
    return side


def make_node_grid(p, bbox=UNIT_BBOX, bandwidth=None, resolution=1):
    """Place a sqrt(p) x sqrt(p) lattice spanning ``bbox`` edge to edge.

    ``bbox`` is ``((xmin, ymin), (xmax, ymax))``. Without an explicit
    bandwidth the rule ``2.5 * spacing`` is used, where spacing is the larger
    of the two lattice steps.
    """
    side = lattice_side(p)
    (x0, y0), (x1, y1) = bbox
    xs = np.linspace(x0, x1, side)
    ys = np.linspace(y0, y1, side)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    if bandwidth is None:
        spacing = max(x1 - x0, y1 - y0) / (side - 1)
        bandwidth = BANDWIDTH_FACTOR * spacing
    if not bandwidth > 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth}")
    return NodeGrid(nodes, float(bandwidth), resolution)


def basis_features(coords, node_grids):
    """Concatenate phi(||s - u_j|| / delta_m) over all resolutions.

    ``coords`` is an ``(n, 2)`` array already in the lattice's coordinate frame.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    blocks = []
    for grid in node_grids:
        diff = coords[:, None, :] - grid.nodes[None, :, :]
        dist = np.sqrt(np.einsum("npk,npk->np", diff, diff))
        blocks.append(wendland(dist / grid.bandwidth))
    if not blocks:
        return np.zeros((len(coords), 0))
    return np.hstack(blocks)


def multiresolution_grids(node_counts, bbox=UNIT_BBOX, bandwidths=None):
    """Node grids for each entry of ``node_counts`` (e.g. ``(9, 25, 49)``)."""
    grids = []
    for m, p in enumerate(node_counts):
        bw = None if bandwidths is None else bandwidths[m]
        grids.append(make_node_grid(p, bbox, bw, resolution=m + 1))
    widths = [g.bandwidth for g in grids]
    if any(a <= b for a, b in zip(widths, widths[1:])):
        raise ConfigurationError(f"bandwidths must strictly decrease with resolution, got {widths}")
    return grids


@dataclass
class FeatureRecipe:
    """Everything needed to turn (T, X, s) into the network input.

    Layout of a feature row: ``[T, standardised X..., (scaled s), phi(s)]``.
    Coordinates are min-max scaled into the unit square using the bounds seen
    at fit time; node lattices live in that scaled frame.
    """

    n_covariates: int
    covariate_mean: np.ndarray
    covariate_scale: np.ndarray
    coord_min: np.ndarray
    coord_max: np.ndarray
    node_grids: list = field(default_factory=list)
    include_coordinates: bool = False
    covariate_names: tuple = ()
    include_covariates: bool = True

    @property
    def resolutions(self):
        return len(self.node_grids)

    @property
    def n_features(self):
        return 1 + self.n_covariates + (2 if self.include_coordinates else 0) + sum(
            g.p for g in self.node_grids
        )

    def scale_coords(self, coords):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        span = np.where(self.coord_max > self.coord_min, self.coord_max - self.coord_min, 1.0)
        return (coords - self.coord_min) / span

    def build(self, t, X, coords):
        """Feature matrix for treatment vector ``t``, covariates ``X`` and ``coords``."""
        t = np.asarray(t, dtype=float).reshape(-1, 1)
        X = np.asarray(X, dtype=float).reshape(len(t), -1)
        if X.shape[1] != self.n_covariates:
            raise ShapeError(f"expected {self.n_covariates} covariates, got {X.shape[1]}")
        parts = [t, (X - self.covariate_mean) / self.covariate_scale]
        s = self.scale_coords(coords)
        if self.include_coordinates:
            parts.append(s)
        if self.node_grids:
            parts.append(basis_features(s, self.node_grids))
        return np.hstack(parts)

    def to_dict(self):
        return {
            "n_covariates": self.n_covariates,
            "covariate_names": list(self.covariate_names),
            "covariate_mean": [float(v) for v in self.covariate_mean],
            "covariate_scale": [float(v) for v in self.covariate_scale],
            "coord_min": [float(v) for v in self.coord_min],
            "coord_max": [float(v) for v in self.coord_max],
            "include_coordinates": bool(self.include_coordinates),
            "node_grids": [g.to_dict() for g in self.node_grids],
            "treatment": "t",
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_covariates=int(d["n_covariates"]),
            covariate_mean=np.asarray(d["covariate_mean"], dtype=float),
            covariate_scale=np.asarray(d["covariate_scale"], dtype=float),
            coord_min=np.asarray(d["coord_min"], dtype=float),
            coord_max=np.asarray(d["coord_max"], dtype=float),
            node_grids=[NodeGrid.from_dict(g) for g in d["node_grids"]],
            include_coordinates=bool(d["include_coordinates"]),
            covariate_names=tuple(d.get("covariate_names", ())),
        )


def make_recipe(
    X,
    coords,
    node_counts=(),
    include_coordinates=False,
    node_bbox=None,
    bandwidths=None,
    coord_bounds=None,
    covariate_names=(),
):
    """Fit a :class:`FeatureRecipe` on training covariates and coordinates.

    ``coord_bounds`` fixes the coordinate scaling (defaults to the bounding box
    of ``coords``); ``node_bbox`` is the lattice extent in the scaled frame
    (defaults to the whole unit square).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if coord_bounds is None:
        cmin, cmax = coords.min(axis=0), coords.max(axis=0)
    else:
        cmin, cmax = (np.asarray(b, dtype=float) for b in coord_bounds)
    mean = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
    scale = X.std(axis=0) if len(X) else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    grids = multiresolution_grids(node_counts, node_bbox or UNIT_BBOX, bandwidths)
    return FeatureRecipe(
        n_covariates=X.shape[1],
        covariate_mean=mean,
        covariate_scale=scale,
        coord_min=cmin,
        coord_max=cmax,
        node_grids=grids,
        include_coordinates=include_coordinates,
        covariate_names=tuple(covariate_names),
    )


class SpatialBasisTransformer(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer producing multi-resolution Wendland features.

    Parameters
    ----------
    node_counts : tuple of int
        Lattice sizes per resolution; each must be a perfect square.
    bandwidths : tuple of float, optional
        Per-resolution override of the ``2.5 * spacing`` rule.
    """

    def __init__(self, node_counts=(9, 25, 49), bandwidths=None):
        self.node_counts = node_counts
        self.bandwidths = bandwidths

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 coordinate columns, got {X.shape[1]}")
        self.coord_min_ = X.min(axis=0)
        self.coord_max_ = X.max(axis=0)
        self.node_grids_ = multiresolution_grids(self.node_counts, UNIT_BBOX, self.bandwidths)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "node_grids_")
        X = check_array(X)
        span = np.where(self.coord_max_ > self.coord_min_, self.coord_max_ - self.coord_min_, 1.0)
        return basis_features((X - self.coord_min_) / span, self.node_grids_)


@dataclass(frozen=True)
class FeatureSpec:
    """Unfitted description of the feature layout (which blocks to include).

    ``node_counts`` lists the lattice size per resolution; an empty tuple
    means no basis features.
    """

    node_counts: tuple = ()
    include_coordinates: bool = False
    bandwidths: tuple = None

    def fit(self, obs, node_bbox=None, coord_bounds=None):
        return make_recipe(
            obs.X,
            obs.coords,
            node_counts=self.node_counts,
            include_coordinates=self.include_coordinates,
            node_bbox=node_bbox,
            bandwidths=self.bandwidths,
            coord_bounds=coord_bounds,
            covariate_names=obs.covariate_names,
        )


#: feature layouts of the five model variants
VARIANTS = {
    1: FeatureSpec(),
    2: FeatureSpec(include_coordinates=True),
    3: FeatureSpec(node_counts=(9,)),
    4: FeatureSpec(node_counts=(9, 25)),
    5: FeatureSpec(node_counts=(9, 25, 49)),
}


def variant_spec(variant, include_coordinates=None):
    """Feature spec for model variant 1-5, optionally forcing raw coordinates on or off."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"model variant must be 1-5, got {variant}")
    spec = VARIANTS[variant]
    if include_coordinates is not None:
        spec = FeatureSpec(spec.node_counts, include_coordinates, spec.bandwidths)
    return spec
