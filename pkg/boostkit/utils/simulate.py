"""Synthetic data generators with known truth."""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from config import settings
from ..models.dataset import Dataset, ResponseVector
from ..models.errors import DataError
from .helpers import make_rng

logger = logging.getLogger(__name__)


def appendix_function(x) -> np.ndarray:
    """f(x) = (0.5 - 0.9 exp(-50 x^2)) x, a smooth odd curve with a kink near 0."""
    x = np.asarray(x, dtype=float)
    return (0.5 - 0.9 * np.exp(-50.0 * x ** 2)) * x


def simulate_appendix(n: int = 150, seed: int = settings.SEED,
                      noise: float = 0.02) -> Tuple[Dataset, np.ndarray]:
    """x ~ U(-0.2, 0.2), y = f(x) + noise * N(0, 1); returns the data and f(x)."""
    if n < 1:
        raise DataError(f"n must be positive, got {n}")
    rng = make_rng(seed)
    x = rng.uniform(-0.2, 0.2, size=n)
    truth = appendix_function(x)
    y = truth + noise * rng.standard_normal(n)
    dataset = Dataset(predictors=x[:, None], names=("x",), response=ResponseVector.continuous(y))
    return dataset, truth


def simulate_gaussian(
    n: int = 100,
    p: int = 5,
    coefficients: Optional[Sequence[float]] = None,
    intercept: float = 1.0,
    noise: float = 1.0,
    seed: int = settings.SEED,
) -> Tuple[Dataset, np.ndarray]:
    """Linear model with N(0, 1) predictors; returns the data and the true mean."""
    if n < 1 or p < 1:
        raise DataError(f"Need n >= 1 and p >= 1, got n={n}, p={p}")
    beta = np.zeros(p)
    if coefficients is None:
        coefficients = [1.0, -0.5, 0.25][:p]
    if len(coefficients) > p:
        raise DataError(f"{len(coefficients)} coefficients given for {p} predictors")
    beta[:len(coefficients)] = coefficients
    rng = make_rng(seed)
    X = rng.standard_normal((n, p))
    mean = intercept + X @ beta
    y = mean + noise * rng.standard_normal(n)
    names = tuple(f"x{j + 1}" for j in range(p))
    return Dataset(predictors=X, names=names, response=ResponseVector.continuous(y)), mean


def simulate_survival(
    n: int = 60,
    p: int = 100,
    effects: Sequence[float] = (1.5, -1.5, 1.0),
    seed: int = settings.SEED,
    baseline_rate: float = 0.1,
    censoring_rate: float = 0.03,
    shape: float = 1.0,
) -> Tuple[Dataset, np.ndarray]:
    """Proportional hazards data with Weibull baseline and exponential censoring.

    The first len(effects) predictors carry the given log hazard ratios;
    the rest are noise. Returns the data and the true linear predictor.
    """
    if len(effects) > p:
        raise DataError(f"{len(effects)} effects given for {p} predictors")
    if baseline_rate <= 0 or censoring_rate <= 0 or shape <= 0:
        raise DataError("Rates and shape must be positive")
    beta = np.zeros(p)
    beta[:len(effects)] = effects
    rng = make_rng(seed)
    X = rng.standard_normal((n, p))
    eta = X @ beta
    # inverse cumulative hazard of H(t) = baseline_rate * t^shape * exp(eta)
    event_time = (rng.exponential(size=n) / (baseline_rate * np.exp(eta))) ** (1.0 / shape)
    censor_time = rng.exponential(1.0 / censoring_rate, size=n)
    time = np.minimum(event_time, censor_time)
    status = (event_time <= censor_time).astype(float)
    if not status.any():
        raise DataError("Simulated data contain no events; lower the censoring rate")
    logger.info(f"Simulated survival data: n={n}, p={p}, events={int(status.sum())}")
    names = tuple(f"x{j + 1}" for j in range(p))
    return Dataset(predictors=X, names=names, response=ResponseVector.survival(time, status)), eta
