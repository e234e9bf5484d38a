"""Discrete AdaBoost with decision stumps."""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from config import settings
from ..models.dataset import Dataset, ResponseKind
from ..models.errors import DataError, ModelError
from .baselearners import Stump, fit_stump

logger = logging.getLogger(__name__)

ENGINE = "adaboost"
EPSILON_FLOOR = 1e-10


@dataclass(frozen=True)
class AdaRound:
    stump: Stump
    alpha: float
    epsilon: float


@dataclass(frozen=True)
class AdaBoostModel:
    names: Tuple[str, ...]
    rounds: Tuple[AdaRound, ...]
    terminated_early: bool = False
    reason: str = ""
    labels: Optional[Tuple[str, str]] = None
    requested_rounds: int = 0
    engine: str = field(default=ENGINE, init=False)

    @property
    def m_stop(self) -> int:
        return len(self.rounds)

    @property
    def p(self) -> int:
        return len(self.names)


def _check_binary(d: Dataset) -> np.ndarray:
    if d.response.kind is not ResponseKind.BINARY:
        raise DataError("Binary response required for AdaBoost")
    y = np.asarray(d.y, dtype=float)
    if np.all(y > 0) or np.all(y < 0):
        raise DataError("Both classes must be present for AdaBoost")
    return y


def fit_adaboost(d: Dataset, m_stop: int = settings.DEFAULT_MSTOP) -> AdaBoostModel:
    """Fit up to m_stop rounds of discrete AdaBoost.

    alpha_m = 0.5 * log((1 - eps_m) / eps_m) with eps_m floored at 1e-10.
    Fitting stops early when no stump beats chance (eps >= 0.5, round
    discarded) or when a stump is perfect (eps = 0, round kept).
    """
    if m_stop < 0:
        raise DataError(f"m_stop must be nonnegative, got {m_stop}")
    y = _check_binary(d)
    X = d.predictors
    w = np.full(d.n, 1.0 / d.n)
    rounds = []
    reason = ""
    labels = None
    if d.response.labels:
        labels = (d.response.labels.get("+1", "+1"), d.response.labels.get("-1", "-1"))

    logger.info(f"AdaBoost: up to {m_stop} rounds on n={d.n}, p={d.p}")
    for m in range(m_stop):
        stump, _ = fit_stump(X, y, w)
        h = stump.predict(X)
        miss = h != y
        epsilon = float(w[miss].sum())
        if epsilon >= 0.5:
            reason = f"no stump better than chance at round {m + 1} (epsilon={epsilon:.6g})"
            break
        floored = max(epsilon, EPSILON_FLOOR)
        alpha = 0.5 * float(np.log((1.0 - floored) / floored))
        rounds.append(AdaRound(stump=stump, alpha=alpha, epsilon=epsilon))
        logger.debug(f"Round {m + 1}: '{d.names[stump.component]}' <> {stump.threshold:.6g}, "
                     f"epsilon={epsilon:.6g}, alpha={alpha:.6g}")
        if epsilon == 0.0:
            reason = f"perfect stump at round {m + 1}"
            break
        w = w * np.exp(-alpha * y * h)
        w = w / w.sum()

    if reason:
        logger.info(f"AdaBoost stopped early: {reason}")
    return AdaBoostModel(
        names=d.names,
        rounds=tuple(rounds),
        terminated_early=bool(reason),
        reason=reason,
        labels=labels,
        requested_rounds=m_stop,
    )


def _margins(model: AdaBoostModel, X: np.ndarray, upto: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ModelError(f"Expected a matrix with {model.p} columns, got shape {X.shape}")
    margin = np.zeros(X.shape[0])
    for r in model.rounds[:upto]:
        margin = margin + r.alpha * r.stump.predict(X)
    return margin


def predict_adaboost(model: AdaBoostModel, newX, at_m: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted majority vote (sign(0) = +1) and the vote sum F(x)."""
    if model.m_stop == 0:
        raise ModelError("AdaBoost model has no rounds")
    if at_m is not None and not 1 <= at_m <= model.m_stop:
        raise ModelError(f"Round {at_m} outside 1..{model.m_stop}")
    margin = _margins(model, newX, at_m)
    return np.where(margin >= 0.0, 1.0, -1.0), margin


def partial_margins(model: AdaBoostModel, newX, m: int) -> np.ndarray:
    """Vote sum over the first min(m, rounds) rounds; zero for m = 0."""
    if m < 0:
        raise ModelError(f"Round {m} must be nonnegative")
    return _margins(model, newX, min(m, model.m_stop))


def truncate_adaboost(model: AdaBoostModel, m: int) -> AdaBoostModel:
    if not 0 <= m <= model.m_stop:
        raise ModelError(f"Cannot truncate a model with {model.m_stop} rounds to {m}")
    return replace(model, rounds=model.rounds[:m])


def exponential_risk_path(model: AdaBoostModel, d: Dataset) -> np.ndarray:
    """(1/n) sum exp(-y F_m(x)) for m = 0..rounds."""
    if model.m_stop == 0:
        raise ModelError("AdaBoost model has no rounds")
    y = _check_binary(d)
    margin = np.zeros(d.n)
    risks = [float(np.mean(np.exp(-y * margin)))]
    for r in model.rounds:
        margin = margin + r.alpha * r.stump.predict(d.predictors)
        risks.append(float(np.mean(np.exp(-y * margin))))
    return np.array(risks)


def training_error_path(model: AdaBoostModel, d: Dataset) -> np.ndarray:
    """Misclassification rate of the vote after each round; a diagnostic only."""
    if model.m_stop == 0:
        raise ModelError("AdaBoost model has no rounds")
    y = _check_binary(d)
    margin = np.zeros(d.n)
    errors = []
    for r in model.rounds:
        margin = margin + r.alpha * r.stump.predict(d.predictors)
        errors.append(float(np.mean(np.where(margin >= 0.0, 1.0, -1.0) != y)))
    return np.array(errors)
