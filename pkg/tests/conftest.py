import numpy as np
import pandas as pd
import pytest

from boostkit.models.dataset import Dataset, ResponseVector


@pytest.fixture
def rng():
    return np.random.default_rng(20130101)


def make_gaussian(n=50, p=5, seed=1, beta=(1.5, -2.0, 0.0, 0.5, 0.0), noise=0.5):
    """Linear Gaussian data with N(0, 1) predictors."""
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((n, p))
    beta = np.asarray(beta[:p], dtype=float)
    y = 1.0 + X @ beta + noise * gen.standard_normal(n)
    names = tuple(f"x{j + 1}" for j in range(p))
    return Dataset(predictors=X, names=names, response=ResponseVector.continuous(y))


def make_binary(n=80, p=3, seed=2):
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((n, p))
    score = 1.5 * X[:, 0] - X[:, 1] + 0.5 * gen.standard_normal(n)
    y = np.where(score >= 0, 1.0, -1.0)
    names = tuple(f"x{j + 1}" for j in range(p))
    return Dataset(predictors=X, names=names, response=ResponseVector.binary(y))


@pytest.fixture
def gaussian_data():
    return make_gaussian()


@pytest.fixture
def binary_data():
    return make_binary()


@pytest.fixture
def write_csv(tmp_path):
    """Write a dict of columns to a CSV file under tmp_path and return its path."""

    def _write(columns, name="data.csv"):
        path = tmp_path / name
        pd.DataFrame(columns).to_csv(path, index=False, lineterminator="\n")
        return path

    return _write
