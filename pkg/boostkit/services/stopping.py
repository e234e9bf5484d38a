"""Choosing the stopping iteration.

Two routes: information criteria (AICc, BIC) built on the boosting degrees
of freedom for L2 fits, and resampling, which refits on every training
split and scores the held-out observations with the fitting loss along a
grid of iterations.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import settings
from ..models.dataset import Dataset, ResamplingScheme
from ..models.errors import BoostkitError, DataError, ModelError
from ..utils.helpers import default_strata, resample_indices
from . import adaboost, gradboost, likboost
from .baselearners import LearnerSpec, hat_matrix
from .gradboost import BoostModel
from .losses import L2Loss, LossFamily

logger = logging.getLogger(__name__)

ENGINES = ("gradient", "glm", "cox", "adaboost")


@dataclass(frozen=True, eq=False)
class DfPath:
    """Boosting degrees of freedom trace(B_m) for m = 0..len(df) - 1."""

    df: np.ndarray

    def __getitem__(self, m: int) -> float:
        return float(self.df[m])

    def __len__(self) -> int:
        return len(self.df)


def df_path(model: BoostModel, d: Dataset, up_to_m: Optional[int] = None) -> DfPath:
    """Propagate B_m = B_{m-1} + sl * H_j (I - B_{m-1}) from the mean smoother B_0."""
    if not isinstance(model.family, L2Loss):
        raise ModelError(
            f"Degrees of freedom need the L2 family, got '{model.family.describe()}'; "
            f"use resampling (cv) to choose the stopping iteration"
        )
    up_to_m = model._check_m(up_to_m)
    Z = model.scaling.apply(d.predictors)
    n = d.n
    B = np.full((n, n), 1.0 / n)
    df = [float(np.trace(B))]
    hats: Dict[int, np.ndarray] = {}
    for entry in model.path[:up_to_m]:
        j = entry.component
        if j not in hats:
            hats[j] = hat_matrix(model.learners[j], Z[:, j])
        B = B + model.step_length * hats[j] @ (np.eye(n) - B)
        df.append(float(np.trace(B)))
    return DfPath(df=np.array(df))


def aicc_value(sigma2: float, df: float, n: int) -> float:
    """log(sigma2) + (1 + df/n) / (1 - (df + 2)/n)."""
    return float(np.log(sigma2) + (1.0 + df / n) / (1.0 - (df + 2.0) / n))


def bic_value(sigma2: float, df: float, n: int) -> float:
    return float(n * np.log(sigma2) + df * np.log(n))


@dataclass(frozen=True, eq=False)
class CriterionPath:
    criterion: str
    grid: np.ndarray
    values: np.ndarray
    df: np.ndarray
    selected: int

    @property
    def minimum(self) -> float:
        return float(self.values[list(self.grid).index(self.selected)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"m": self.grid, "df": self.df, self.criterion: self.values})


def _check_grid(grid: Optional[Sequence[int]], m_max: int) -> np.ndarray:
    grid = np.arange(m_max + 1) if grid is None else np.asarray(list(grid), dtype=int)
    if grid.size == 0:
        raise DataError("Empty iteration grid")
    if np.any(np.diff(grid) <= 0):
        raise DataError("Iteration grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > m_max:
        raise DataError(f"Iteration grid must lie within 0..{m_max}")
    return grid


def _information_criterion(name: str, model: BoostModel, d: Dataset,
                           grid: Optional[Sequence[int]]) -> CriterionPath:
    grid = _check_grid(grid, model.m_stop)
    dfs = df_path(model, d, int(grid[-1])).df[grid]
    sigma2 = 2.0 * gradboost.risk_path(model, d)[grid]
    n = d.n
    values = np.full(grid.size, np.inf)
    for k, (m, df) in enumerate(zip(grid, dfs)):
        if name == "aicc" and df + 2.0 >= n:
            logger.warning(f"AICc undefined at m={m} (df={df:.3f}, n={n}); grid point excluded")
            continue
        values[k] = aicc_value(sigma2[k], df, n) if name == "aicc" else bic_value(sigma2[k], df, n)
    if not np.isfinite(values).any():
        raise DataError(f"{name.upper()} undefined at every grid point")
    selected = int(grid[int(np.argmin(values))])
    logger.info(f"{name.upper()}-optimal stopping iteration: {selected}")
    return CriterionPath(criterion=name, grid=grid, values=values, df=dfs, selected=selected)


def aic_corrected(model: BoostModel, d: Dataset, grid: Optional[Sequence[int]] = None) -> CriterionPath:
    """Corrected AIC per grid point; argmin with smallest-m tie-break."""
    return _information_criterion("aicc", model, d, grid)


def bic(model: BoostModel, d: Dataset, grid: Optional[Sequence[int]] = None) -> CriterionPath:
    """n log(sigma2) + df log(n) per grid point."""
    return _information_criterion("bic", model, d, grid)


@dataclass(frozen=True)
class FitConfig:
    """Everything needed to refit one engine on a resampled training set."""

    engine: str = "gradient"
    family: Optional[LossFamily] = None
    learners: Optional[Tuple[LearnerSpec, ...]] = None
    step_length: float = settings.DEFAULT_STEP_LENGTH
    glm_family: str = "gaussian"
    penalty: Optional[likboost.PenaltySpec] = None
    standardize: bool = False

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise DataError(f"Unknown engine '{self.engine}'; choose from {', '.join(ENGINES)}")
        if self.engine == "gradient" and self.family is None:
            raise DataError("The gradient engine needs a loss family")
        if self.engine in ("glm", "cox") and self.penalty is None:
            raise DataError("Likelihood boosting needs a penalty or step size")
        if self.engine == "cox" and any(spec.kind != "linear" for spec in self.learners or ()):
            raise DataError("P-spline components are available for the gradient and glm engines only")

    def fit(self, d: Dataset, m_stop: int, track_hat: bool = True):
        if self.engine == "gradient":
            return gradboost.fit(d, self.family, self.learners, m_stop, self.step_length, self.standardize)
        if self.engine == "glm":
            return likboost.fit_glm(d, likboost.glm_family(self.glm_family), self.penalty, m_stop,
                                    self.standardize, track_hat=track_hat, learners=self.learners)
        if self.engine == "cox":
            return likboost.fit_cox(d, self.penalty, m_stop, standardize=self.standardize)
        return adaboost.fit_adaboost(d, m_stop)

    def loss_id(self) -> str:
        if self.engine == "gradient":
            return self.family.describe()
        if self.engine == "glm":
            return f"{self.glm_family}-deviance"
        if self.engine == "cox":
            return "neg-partial-loglik"
        return "exponential"


def held_out_risk(config: FitConfig, model, test: Dataset, grid: np.ndarray) -> np.ndarray:
    """Out-of-sample loss of `model` on `test` at every m in grid."""
    if config.engine == "gradient":
        config.family.check_response(test.response)
        predictions = (gradboost.linear_predictor(model, test.predictors, m) for m in grid)
        return np.array([model.family.empirical_risk(test.y, f) for f in predictions])
    if config.engine in ("glm", "cox"):
        return np.array([likboost.lik_risk(model, test, m) for m in grid])
    y = np.asarray(test.y, dtype=float)
    return np.array([float(np.mean(np.exp(-y * adaboost.partial_margins(model, test.predictors, m))))
                     for m in grid])


@dataclass(frozen=True, eq=False)
class StoppingReport:
    grid: np.ndarray
    # resamples x grid; skipped resamples are left out
    risk: np.ndarray
    resamples: Tuple[int, ...]
    selected: int
    criterion: str
    seed: int
    scheme: str
    skipped: Tuple[int, ...] = field(default=())

    @property
    def mean_risk(self) -> np.ndarray:
        return self.risk.mean(axis=0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.risk, columns=[str(m) for m in self.grid])
        frame.insert(0, "resample", [k + 1 for k in self.resamples])
        return frame

    def mean_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"m": self.grid, "mean_risk": self.mean_risk})


def select_mstop(grid: Sequence[int], mean_risk: Sequence[float]) -> int:
    """Grid point with minimal mean risk; ties go to the smallest m."""
    grid = np.asarray(grid)
    mean_risk = np.asarray(mean_risk, dtype=float)
    if grid.shape != mean_risk.shape or grid.size == 0:
        raise DataError("Grid and mean risk must be non-empty and of equal length")
    return int(grid[int(np.argmin(mean_risk))])


def _fold_risk(k: int, config: FitConfig, d: Dataset, train: np.ndarray, test: np.ndarray,
               grid: np.ndarray) -> Optional[np.ndarray]:
    try:
        model = config.fit(d.subset(train), int(grid[-1]), track_hat=False)
        return held_out_risk(config, model, d.subset(test), grid)
    except BoostkitError as e:
        logger.warning(f"Resample {k + 1} skipped: {str(e)}")
        return None


def cv_risk(
    d: Dataset,
    config: FitConfig,
    scheme: ResamplingScheme,
    grid: Sequence[int],
    threads: int = settings.THREADS,
    strata: Optional[Sequence] = None,
) -> StoppingReport:
    """Resampling estimate of the out-of-sample risk along `grid`."""
    grid = np.asarray(list(grid), dtype=int)
    if grid.size == 0 or grid[-1] < 1:
        raise DataError("Iteration grid must reach at least m = 1")
    grid = _check_grid(grid, int(grid[-1]))
    if scheme.stratified and strata is None:
        strata = default_strata(d)
    splits = resample_indices(scheme, d.n, strata)
    logger.info(f"Resampling risk: {scheme.describe()}, {len(splits)} resamples, "
                f"grid {grid[0]}..{grid[-1]} ({grid.size} points), threads={threads}")

    results = Parallel(n_jobs=max(1, threads), prefer="threads")(
        delayed(_fold_risk)(k, config, d, train, test, grid) for k, (train, test) in enumerate(splits)
    )
    kept = [k for k, risk in enumerate(results) if risk is not None]
    skipped = tuple(k for k, risk in enumerate(results) if risk is None)
    if not kept:
        raise DataError("Every resample was skipped; no risk estimate available")
    if skipped:
        logger.warning(f"Skipped {len(skipped)} of {len(splits)} resamples: {[k + 1 for k in skipped]}")
    risk = np.vstack([results[k] for k in kept])
    selected = select_mstop(grid, risk.mean(axis=0))
    logger.info(f"Selected stopping iteration m*={selected}")
    return StoppingReport(
        grid=grid,
        risk=risk,
        resamples=tuple(kept),
        selected=selected,
        criterion=config.loss_id(),
        seed=scheme.seed,
        scheme=scheme.describe(),
        skipped=skipped,
    )


def parse_grid(text: str) -> List[int]:
    """`a:b` or `a:b:stride` (inclusive of b), or a comma-separated list."""
    try:
        if ":" in text:
            parts = [int(part) for part in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError(text)
            start, stop = parts[0], parts[1]
            stride = parts[2] if len(parts) == 3 else 1
            if stride < 1 or stop < start:
                raise ValueError(text)
            values = list(range(start, stop + 1, stride))
            if values[-1] != stop:
                values.append(stop)
            return values
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise DataError(f"Invalid grid '{text}'; use a:b, a:b:stride or a list")
