import numpy as np
import pandas as pd
import pytest

from csqr.data import Observations, read_csv
from csqr.exceptions import SchemaError


def _frame(n=6):
    rng = np.random.default_rng(0)
    return pd.DataFrame({"y": rng.normal(size=n), "t": [0, 1] * (n // 2), "lon": [0.0, 1.0] * (n // 2),
                         "lat": 0.5, "a": rng.normal(size=n), "b": rng.normal(size=n)})


def test_covariates_auto_detected():
    obs = Observations.from_frame(_frame())
    assert obs.covariate_names == ("a", "b")
    assert obs.X.shape == (6, 2)


@pytest.mark.parametrize("col", ["y", "t", "lon", "lat"])
def test_missing_required_column(col):
    with pytest.raises(SchemaError) as err:
        Observations.from_frame(_frame().drop(columns=col))
    assert err.value.column == col and repr(col) in str(err.value)


def test_bad_values():
    df = _frame()
    df.loc[0, "t"] = 2
    with pytest.raises(SchemaError):
        Observations.from_frame(df)
    df = _frame()
    df.loc[1, "a"] = np.nan
    with pytest.raises(SchemaError):
        Observations.from_frame(df)
    df = _frame()
    df["b"] = "x"
    with pytest.raises(SchemaError) as err:
        Observations.from_frame(df)
    assert err.value.column == "b"


def test_locations_and_subset():
    obs = Observations.from_frame(_frame())
    locs, inv = obs.locations()
    assert locs.tolist() == [[0.0, 0.5], [1.0, 0.5]]
    assert inv.tolist() == [0, 1, 0, 1, 0, 1]
    sub = obs.subset([1, 3])
    assert len(sub) == 2 and sub.t.tolist() == [1.0, 1.0]


def test_read_csv_empty(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(SchemaError):
        read_csv(p)
