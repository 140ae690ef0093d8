"""Observation tables and CSV schema handling."""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import SchemaError

REQUIRED = ("y", "t", "lon", "lat")
ORACLE_COLUMNS = ("h1", "h2", "h3", "u")
RESERVED = set(REQUIRED) | set(ORACLE_COLUMNS) | {"rep"}


@dataclass
class Observations:
    """Responses, binary treatment, covariates and 2-D locations, row aligned."""

    y: np.ndarray
    t: np.ndarray
    X: np.ndarray
    coords: np.ndarray
    covariate_names: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), -1)
        self.coords = np.asarray(self.coords, dtype=float).reshape(len(self.y), 2)
        if not self.covariate_names:
            self.covariate_names = tuple(f"x{i + 1}" for i in range(self.X.shape[1]))
        if len({len(self.y), len(self.t), len(self.X), len(self.coords)}) != 1:
            raise ValueError("observation arrays have different lengths")

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Observations(
            self.y[idx],
            self.t[idx],
            self.X[idx],
            self.coords[idx],
            self.covariate_names,
            {k: np.asarray(v)[idx] for k, v in self.extra.items()},
        )

    def locations(self):
        """Unique locations (P x 2) and the location index of every row.

        Locations are ordered lexicographically by (lon, lat).
        """
        uniq, inverse = np.unique(self.coords, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1)

    def to_frame(self):
        cols = {"lon": self.coords[:, 0], "lat": self.coords[:, 1], "y": self.y, "t": self.t}
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.X[:, j]
        return pd.DataFrame(cols)

    @classmethod
    def from_frame(cls, df, covariates=None):
        """Build from a frame with columns y, t, lon, lat and numeric covariates.

        Covariates default to every non-reserved column, in file order.
        """
        for col in REQUIRED:
            if col not in df.columns:
                raise SchemaError(f"missing required column {col!r}", column=col)
        if covariates is None:
            covariates = [c for c in df.columns if c not in RESERVED]
        for col in list(REQUIRED) + list(covariates):
            if col not in df.columns:
                raise SchemaError(f"missing covariate column {col!r}", column=col)
            if not pd.api.types.is_numeric_dtype(df[col]):
                raise SchemaError(f"column {col!r} is not numeric", column=col)
            if df[col].isna().any():
                raise SchemaError(f"column {col!r} has missing values", column=col)
        t = df["t"].to_numpy(dtype=float)
        if not np.isin(t, (0.0, 1.0)).all():
            raise SchemaError("column 't' must be binary 0/1", column="t")
        extra = {c: df[c].to_numpy() for c in ORACLE_COLUMNS + ("rep",) if c in df.columns}
        return cls(
            y=df["y"].to_numpy(dtype=float),
            t=t,
            X=df[list(covariates)].to_numpy(dtype=float).reshape(len(df), -1),
            coords=df[["lon", "lat"]].to_numpy(dtype=float),
            covariate_names=tuple(covariates),
            extra=extra,
        )


def read_csv(path, covariates=None):
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: empty file") from exc
    return Observations.from_frame(df, covariates)
