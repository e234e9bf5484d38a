from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


class ResponseKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    SURVIVAL = "survival"


@dataclass(frozen=True, eq=False)
class ResponseVector:
    """Typed response: continuous values, ±1 labels or (time, status) pairs."""

    kind: ResponseKind
    values: Optional[np.ndarray] = None
    time: Optional[np.ndarray] = None
    status: Optional[np.ndarray] = None
    # original label for +1 and -1 (binary only)
    labels: Optional[Dict[str, str]] = None

    @classmethod
    def continuous(cls, y: Sequence[float]) -> "ResponseVector":
        values = _frozen(y)
        if values.ndim != 1 or values.size == 0:
            raise DataError("Continuous response must be a non-empty vector")
        if not np.all(np.isfinite(values)):
            raise DataError("Continuous response contains non-finite values")
        return cls(kind=ResponseKind.CONTINUOUS, values=values)

    @classmethod
    def binary(cls, y: Sequence[float], labels: Optional[Dict[str, str]] = None) -> "ResponseVector":
        values = _frozen(y)
        if values.ndim != 1 or values.size == 0:
            raise DataError("Binary response must be a non-empty vector")
        if not np.all(np.isin(values, (-1.0, 1.0))):
            raise DataError("Binary response must be coded as -1/+1")
        return cls(
            kind=ResponseKind.BINARY,
            values=values,
            labels=labels or {"+1": "1", "-1": "-1"},
        )

    @classmethod
    def survival(cls, time: Sequence[float], status: Sequence[float]) -> "ResponseVector":
        time = _frozen(time)
        status = _frozen(status)
        if time.ndim != 1 or time.shape != status.shape or time.size == 0:
            raise DataError("Survival time and status must be vectors of equal length")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DataError("Survival times must be strictly positive")
        if not np.all(np.isin(status, (0.0, 1.0))):
            raise DataError("Survival status must be coded 0 (censored) / 1 (event)")
        return cls(kind=ResponseKind.SURVIVAL, time=time, status=status)

    def __len__(self) -> int:
        if self.kind is ResponseKind.SURVIVAL:
            return int(self.time.size)
        return int(self.values.size)

    @property
    def n_events(self) -> int:
        if self.kind is not ResponseKind.SURVIVAL:
            raise DataError("Event count requires a survival response")
        return int(self.status.sum())

    def subset(self, index: np.ndarray) -> "ResponseVector":
        if self.kind is ResponseKind.SURVIVAL:
            return ResponseVector(kind=self.kind, time=_frozen(self.time[index]),
                                  status=_frozen(self.status[index]))
        return ResponseVector(kind=self.kind, values=_frozen(self.values[index]),
                              labels=self.labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Predictor matrix with column names, a typed response and the
    set of components that must stay unpenalized (0-based)."""

    predictors: np.ndarray
    names: Tuple[str, ...]
    response: ResponseVector
    unpenalized: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        predictors = _frozen(self.predictors)
        if predictors.ndim != 2:
            raise DataError("Predictors must form a two-dimensional matrix")
        n, p = predictors.shape
        if n < 1 or p < 1:
            raise DataError(f"Dataset needs n >= 1 and p >= 1, got n={n}, p={p}")
        if np.isnan(predictors).any():
            raise DataError("Predictors contain missing values")
        if len(self.names) != p:
            raise DataError(f"Expected {p} column names, got {len(self.names)}")
        if len(self.response) != n:
            raise DataError(f"Response has {len(self.response)} rows, predictors have {n}")
        unpenalized = frozenset(int(j) for j in self.unpenalized)
        if any(j < 0 or j >= p for j in unpenalized):
            raise DataError("Unpenalized indices must refer to existing columns")
        object.__setattr__(self, "predictors", predictors)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "unpenalized", unpenalized)

    @property
    def n(self) -> int:
        return self.predictors.shape[0]

    @property
    def p(self) -> int:
        return self.predictors.shape[1]

    @property
    def y(self) -> np.ndarray:
        if self.response.kind is ResponseKind.SURVIVAL:
            raise DataError("Survival responses have no single value vector")
        return self.response.values

    def column(self, j: int) -> np.ndarray:
        return self.predictors[:, j]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"Unknown column '{name}'")

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(
            predictors=self.predictors[index],
            names=self.names,
            response=self.response.subset(index),
            unpenalized=self.unpenalized,
        )

    def with_predictors(self, predictors: np.ndarray) -> "Dataset":
        return Dataset(predictors=predictors, names=self.names,
                       response=self.response, unpenalized=self.unpenalized)


@dataclass(frozen=True, eq=False)
class Scaling:
    """Per-column mean and standard deviation used by standardize()."""

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "sds", _frozen(self.sds))

    @classmethod
    def identity(cls, p: int) -> "Scaling":
        return cls(means=np.zeros(p), sds=np.ones(p))

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.means == 0.0) and np.all(self.sds == 1.0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.sds

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.sds + self.means

    def destandardize_coefficients(self, intercept: float,
                                   coefficients: np.ndarray) -> Tuple[float, np.ndarray]:
        """Map (intercept, slopes) fitted on standardized columns to the original scale."""
        slopes = np.asarray(coefficients, dtype=float) / self.sds
        return float(intercept - np.dot(slopes, self.means)), slopes


class ResamplingKind(str, Enum):
    KFOLD = "kfold"
    BOOTSTRAP = "bootstrap"
    SUBSAMPLE = "subsample"


@dataclass(frozen=True)
class ResamplingScheme:
    kind: ResamplingKind
    folds: int = 25
    fraction: float = 0.5
    stratified: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind is ResamplingKind.KFOLD and self.folds < 2:
            raise DataError("k-fold cross-validation needs K >= 2")
        if self.folds < 1:
            raise DataError("Number of resamples must be at least 1")
        if self.kind is ResamplingKind.SUBSAMPLE and not 0.0 < self.fraction < 1.0:
            raise DataError("Subsampling fraction must lie strictly between 0 and 1")

    @classmethod
    def parse(cls, text: str, seed: int, stratified: bool = False) -> "ResamplingScheme":
        """Parse `kfold:10`, `bootstrap:25` or `subsample:25:0.632`."""
        parts = text.strip().split(":")
        try:
            kind = ResamplingKind(parts[0])
            folds = int(parts[1]) if len(parts) > 1 else 25
            fraction = float(parts[2]) if len(parts) > 2 else 0.5
        except (ValueError, IndexError):
            raise DataError(f"Invalid resampling scheme '{text}'")
        if kind is not ResamplingKind.SUBSAMPLE and len(parts) > 2:
            raise DataError(f"Invalid resampling scheme '{text}'")
        return cls(kind=kind, folds=folds, fraction=fraction,
                   stratified=stratified, seed=seed)

    def describe(self) -> str:
        if self.kind is ResamplingKind.SUBSAMPLE:
            return f"subsample:{self.folds}:{self.fraction}"
        return f"{self.kind.value}:{self.folds}"
