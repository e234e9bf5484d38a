"""Loss families for gradient boosting.

Each family supplies the loss rho(y, f), its negative gradient with respect
to f, the constant offset minimizing the empirical risk and the inverse
link mapping the additive predictor to the response scale.
"""
import logging
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy.special import expit

from ..models.dataset import ResponseKind, ResponseVector
from ..models.errors import DataError, NumericError

logger = logging.getLogger(__name__)


def _weighted_median(values: np.ndarray, weights: Optional[np.ndarray]) -> float:
    if weights is None:
        return float(np.median(values))
    order = np.argsort(values, kind="stable")
    cumulative = np.cumsum(weights[order])
    position = np.searchsorted(cumulative, 0.5 * cumulative[-1])
    return float(values[order][position])


def _check_weights(n: int, weights: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if weights is None:
        return None
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise DataError(f"Weights must have length {n}")
    if np.any(weights < 0):
        raise DataError("Weights must be nonnegative")
    if not weights.sum() > 0:
        raise DataError("Weights must not all be zero")
    return weights


class LossFamily(ABC):
    """Abstract loss family. Subclasses implement `loss`, `negative_gradient`
    and `offset`; `link` names the scale of the additive predictor."""

    id: str = ""
    link: str = "identity"
    response_kind: ResponseKind = ResponseKind.CONTINUOUS

    @abstractmethod
    def loss(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Pointwise loss rho(y_i, f_i)."""

    @abstractmethod
    def negative_gradient(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Pointwise -d rho / d f evaluated at f."""

    @abstractmethod
    def offset(self, y: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
        """Constant minimizing the (weighted) empirical risk."""

    def response(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f, dtype=float)

    def check_values(self, y: np.ndarray) -> None:
        pass

    def check_response(self, response: ResponseVector) -> None:
        if response.kind is not self.response_kind:
            raise DataError(
                f"Family '{self.id}' requires a {self.response_kind.value} response, "
                f"got {response.kind.value}"
            )
        self.check_values(response.values)

    def empirical_risk(self, y: np.ndarray, f: np.ndarray,
                       weights: Optional[np.ndarray] = None) -> float:
        y = np.asarray(y, dtype=float)
        f = np.asarray(f, dtype=float)
        if y.shape != f.shape:
            raise DataError(f"Response and fit lengths differ: {y.shape} vs {f.shape}")
        weights = _check_weights(y.size, weights)
        losses = self.loss(y, f)
        if weights is None:
            return float(np.mean(losses))
        return float(np.dot(weights, losses) / weights.sum())

    def describe(self) -> str:
        return self.id

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class L2Loss(LossFamily):
    id = "l2"

    def loss(self, y, f):
        return 0.5 * (y - f) ** 2

    def negative_gradient(self, y, f):
        return y - f

    def offset(self, y, weights=None):
        return float(np.average(y, weights=weights))


class LaplaceLoss(LossFamily):
    id = "laplace"

    def loss(self, y, f):
        return np.abs(y - f)

    def negative_gradient(self, y, f):
        return np.sign(y - f)

    def offset(self, y, weights=None):
        return _weighted_median(np.asarray(y, dtype=float), weights)


class HuberLoss(LossFamily):
    """Huber loss; `delta=None` makes the threshold adaptive, recomputed as
    median |y - f| at every evaluation."""

    id = "huber"

    def __init__(self, delta: Optional[float] = None):
        if delta is not None and not delta > 0:
            raise DataError(f"Huber delta must be positive, got {delta}")
        self.delta = delta

    def threshold(self, y: np.ndarray, f: np.ndarray) -> float:
        if self.delta is not None:
            return self.delta
        return float(np.median(np.abs(np.asarray(y) - np.asarray(f))))

    def loss(self, y, f):
        delta = self.threshold(y, f)
        residual = np.abs(y - f)
        return np.where(residual <= delta, 0.5 * residual ** 2, delta * (residual - 0.5 * delta))

    def negative_gradient(self, y, f):
        delta = self.threshold(y, f)
        return np.clip(y - f, -delta, delta)

    def offset(self, y, weights=None):
        return _weighted_median(np.asarray(y, dtype=float), weights)

    def describe(self):
        return "huber" if self.delta is None else f"huber:{self.delta!r}"

    def __repr__(self):
        return f"HuberLoss(delta={self.delta!r})"


def _positive_share(y: np.ndarray, weights: Optional[np.ndarray]) -> float:
    share = float(np.average(y > 0, weights=weights))
    if share <= 0.0 or share >= 1.0:
        raise NumericError("Binary response contains a single class; the offset is infinite")
    return share


class ExponentialLoss(LossFamily):
    id = "exponential"
    link = "half-log-odds"
    response_kind = ResponseKind.BINARY

    def loss(self, y, f):
        return np.exp(-y * f)

    def negative_gradient(self, y, f):
        return y * np.exp(-y * f)

    def offset(self, y, weights=None):
        share = _positive_share(y, weights)
        return 0.5 * float(np.log(share / (1.0 - share)))

    def response(self, f):
        return expit(2.0 * np.asarray(f, dtype=float))


class LogisticLoss(LossFamily):
    """Binomial deviance with f on the full log-odds scale."""

    id = "logistic"
    link = "log-odds"
    response_kind = ResponseKind.BINARY

    def loss(self, y, f):
        return np.logaddexp(0.0, -y * f)

    def negative_gradient(self, y, f):
        return y * expit(-y * f)

    def offset(self, y, weights=None):
        share = _positive_share(y, weights)
        return float(np.log(share / (1.0 - share)))

    def response(self, f):
        return expit(np.asarray(f, dtype=float))


class GammaDevianceLoss(LossFamily):
    """Negative Gamma log-likelihood in mu = exp(f), shape dropped,
    shifted so that the minimum over f is zero."""

    id = "gamma"
    link = "log"

    def check_values(self, y):
        if np.any(np.asarray(y) <= 0):
            raise DataError("Gamma family requires a strictly positive response")

    def loss(self, y, f):
        return y * np.exp(-f) + f - 1.0 - np.log(y)

    def negative_gradient(self, y, f):
        return y * np.exp(-f) - 1.0

    def offset(self, y, weights=None):
        self.check_values(y)
        return float(np.log(np.average(y, weights=weights)))

    def response(self, f):
        return np.exp(np.asarray(f, dtype=float))


FAMILIES = {
    "l2": L2Loss,
    "laplace": LaplaceLoss,
    "huber": HuberLoss,
    "exponential": ExponentialLoss,
    "logistic": LogisticLoss,
    "gamma": GammaDevianceLoss,
}


def family_from_id(text: str) -> LossFamily:
    """Parse a CLI family id; `huber:<delta>` fixes the Huber threshold."""
    name, _, argument = text.strip().lower().partition(":")
    if name not in FAMILIES:
        raise DataError(f"Unknown family '{text}'; choose from {', '.join(FAMILIES)}")
    if name == "huber" and argument:
        try:
            return HuberLoss(delta=float(argument))
        except ValueError:
            raise DataError(f"Invalid Huber delta in '{text}'")
    if argument:
        raise DataError(f"Family '{name}' takes no argument")
    return FAMILIES[name]()


def loss_value(fam: LossFamily, y, f):
    """rho(y, f) for scalars or equal-length arrays."""
    y_arr = np.asarray(y, dtype=float)
    f_arr = np.asarray(f, dtype=float)
    fam.check_values(y_arr)
    if fam.response_kind is ResponseKind.BINARY and not np.all(np.isin(y_arr, (-1.0, 1.0))):
        raise DataError(f"Family '{fam.id}' requires responses coded as -1/+1")
    value = fam.loss(y_arr, f_arr)
    return float(value) if np.ndim(value) == 0 else value


def negative_gradient(fam: LossFamily, y, f) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if y.shape != f.shape:
        raise DataError(f"Response and fit lengths differ: {y.shape} vs {f.shape}")
    return fam.negative_gradient(y, f)


def offset_init(fam: LossFamily, y, weights=None) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise DataError("Cannot initialize an offset from an empty response")
    return fam.offset(y, _check_weights(y.size, weights))


def empirical_risk(fam: LossFamily, y, f, weights=None) -> float:
    return fam.empirical_risk(y, f, weights)
