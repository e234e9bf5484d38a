"""Component-wise functional gradient descent.

Starting from a constant offset, every iteration computes the negative
gradient of the loss at the current fit, fits it separately with each
component's base-learner, keeps only the best-fitting component and adds
a fraction `step_length` of its fit. The model stores the full path, so it
can be truncated to any earlier iteration by slicing.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import settings
from ..models.dataset import Dataset, Scaling
from ..models.errors import DataError, ModelError, NumericError
from ..utils.helpers import standardize as standardize_dataset
from .baselearners import LearnerSpec, LinearLearner, build_learner
from .baselearners import extrapolation_flags as learner_flags
from .losses import LossFamily

logger = logging.getLogger(__name__)

ENGINE = "gradient"


@dataclass(frozen=True, eq=False)
class PathEntry:
    """Component selected in one iteration and its unshrunken fit parameters."""

    component: int
    params: np.ndarray


@dataclass(frozen=True, eq=False)
class BoostModel:
    family: LossFamily
    step_length: float
    offset: float
    names: Tuple[str, ...]
    learners: Tuple[object, ...]
    # mean training design row per component, for centering partial effects
    design_means: Tuple[Optional[np.ndarray], ...]
    path: Tuple[PathEntry, ...]
    risk: np.ndarray
    scaling: Scaling
    skipped: Tuple[str, ...] = ()
    engine: str = field(default=ENGINE, init=False)

    @property
    def m_stop(self) -> int:
        return len(self.path)

    @property
    def p(self) -> int:
        return len(self.names)

    def _check_m(self, at_m: Optional[int]) -> int:
        if at_m is None:
            return self.m_stop
        if not 0 <= at_m <= self.m_stop:
            raise ModelError(f"Iteration {at_m} outside 0..{self.m_stop}")
        return int(at_m)

    def summed_params(self, at_m: Optional[int] = None) -> Dict[int, np.ndarray]:
        """Shrunken parameter sums per selected component over the first at_m iterations."""
        at_m = self._check_m(at_m)
        totals: Dict[int, np.ndarray] = {}
        for entry in self.path[:at_m]:
            if entry.component in totals:
                totals[entry.component] = totals[entry.component] + entry.params
            else:
                totals[entry.component] = entry.params.copy()
        return {j: self.step_length * totals[j] for j in sorted(totals)}


@dataclass
class _Candidate:
    component: int
    learner: object
    design: np.ndarray
    smoother: np.ndarray


def _check_setup(d: Dataset, fam: LossFamily, m_stop: int, sl: float) -> None:
    if m_stop < 0:
        raise DataError(f"m_stop must be nonnegative, got {m_stop}")
    if not 0.0 < sl <= 1.0:
        raise DataError(f"Step length must lie in (0, 1], got {sl}")
    fam.check_response(d.response)


def _prepare_candidates(d: Dataset, learners: Sequence[object]) -> Tuple[List[_Candidate], List[str]]:
    candidates, skipped = [], []
    for j, learner in enumerate(learners):
        if learner is None:
            skipped.append(d.names[j])
            continue
        x = d.column(j)
        candidates.append(_Candidate(component=j, learner=learner, design=learner.design(x),
                                     smoother=learner.smoother(x)))
    return candidates, skipped


def _build_one(d: Dataset, spec: LearnerSpec, j: int):
    x = d.column(j)
    if spec.kind == "linear" and not LinearLearner(component=j).is_fittable(x):
        return None
    try:
        return build_learner(spec, x, j, name=d.names[j])
    except DataError as e:
        logger.debug(f"Component '{d.names[j]}': {str(e)}")
        return None


def _build_learners(d: Dataset, specs: Sequence[LearnerSpec], threads: int = 1) -> List[object]:
    """Learner per column; None marks a non-fittable (constant) column."""
    return Parallel(n_jobs=max(1, threads), prefer="threads")(
        delayed(_build_one)(d, spec, j) for j, spec in enumerate(specs)
    )


def select_component(u: np.ndarray, fits: Sequence[Optional[np.ndarray]]) -> int:
    """Index of the fit with the smallest residual sum of squares; ties go to the lowest index."""
    u = np.asarray(u, dtype=float)
    sse = np.array([np.inf if fit is None else float(np.sum((u - fit) ** 2)) for fit in fits])
    if not np.isfinite(sse).any():
        raise NumericError("No fittable component to select")
    return int(np.argmin(sse))


def _boost(d: Dataset, fam: LossFamily, candidates: List[_Candidate], f: np.ndarray,
           iterations: int, sl: float) -> Tuple[List[PathEntry], List[float]]:
    y = d.y
    path: List[PathEntry] = []
    risk: List[float] = []
    for m in range(iterations):
        u = fam.negative_gradient(y, f)
        params = [c.smoother @ u for c in candidates]
        fits = [c.design @ gamma for c, gamma in zip(candidates, params)]
        best = select_component(u, fits)
        f = f + sl * fits[best]
        path.append(PathEntry(component=candidates[best].component, params=params[best]))
        risk.append(fam.empirical_risk(y, f))
        logger.debug(f"Iteration {m + 1}: selected '{d.names[candidates[best].component]}'")
    return path, risk


def fit(
    d: Dataset,
    fam: LossFamily,
    learners: Optional[Sequence[LearnerSpec]] = None,
    m_stop: int = settings.DEFAULT_MSTOP,
    sl: float = settings.DEFAULT_STEP_LENGTH,
    standardize: bool = False,
    threads: int = 1,
) -> BoostModel:
    """Component-wise gradient boosting of `d` under loss family `fam`.

    `threads` parallelizes the per-component learner setup (spline
    calibration); the boosting loop itself is sequential.
    """
    _check_setup(d, fam, m_stop, sl)
    scaling = Scaling.identity(d.p)
    if standardize:
        d, scaling = standardize_dataset(d, ddof=0)
    specs = list(learners) if learners is not None else [LearnerSpec() for _ in range(d.p)]
    if len(specs) != d.p:
        raise DataError(f"Expected {d.p} learner specs, got {len(specs)}")

    built = _build_learners(d, specs, threads)
    candidates, skipped = _prepare_candidates(d, built)
    if not candidates:
        raise NumericError("All base-learners are non-fittable")
    if skipped:
        logger.warning(f"Excluded non-fittable components: {', '.join(skipped)}")

    offset = fam.offset(d.y)
    f = np.full(d.n, offset)
    logger.info(f"Gradient boosting: family={fam.describe()}, m_stop={m_stop}, sl={sl}, "
                f"{len(candidates)} candidate components")
    path, risk = _boost(d, fam, candidates, f, m_stop, sl)
    return BoostModel(
        family=fam,
        step_length=sl,
        offset=offset,
        names=d.names,
        learners=tuple(built),
        design_means=tuple(None if learner is None else learner.design(d.column(j)).mean(axis=0)
                           for j, learner in enumerate(built)),
        path=tuple(path),
        risk=np.array([fam.empirical_risk(d.y, np.full(d.n, offset))] + risk),
        scaling=scaling,
        skipped=tuple(skipped),
    )


def _scaled(model: BoostModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ModelError(f"Expected a matrix with {model.p} columns, got shape {X.shape}")
    return model.scaling.apply(X)


def continue_fit(model: BoostModel, d: Dataset, extra: int) -> BoostModel:
    """Run `extra` further iterations on the training data of `model`."""
    if extra < 0:
        raise DataError(f"Number of extra iterations must be nonnegative, got {extra}")
    Z = _scaled(model, d.predictors)
    scaled = d.with_predictors(Z)
    candidates = []
    for j, learner in enumerate(model.learners):
        if learner is None:
            continue
        x = Z[:, j]
        candidates.append(_Candidate(component=j, learner=learner, design=learner.design(x),
                                     smoother=learner.smoother(x)))
    f = _link_predict(model, Z, model.m_stop)
    path, risk = _boost(scaled, model.family, candidates, f, extra, model.step_length)
    return replace(model, path=model.path + tuple(path),
                   risk=np.concatenate([model.risk, risk]))


def extrapolated_components(model: BoostModel, newX) -> List[str]:
    """Names of spline components evaluated outside their training range."""
    Z = _scaled(model, newX)
    return [model.names[j] for j, learner in enumerate(model.learners)
            if learner is not None and learner.extrapolated(Z[:, j]).any()]


def extrapolation_flags(model: BoostModel, newX) -> List[str]:
    """Per row, the spline components evaluated outside their training range."""
    return learner_flags(model.learners, model.names, _scaled(model, newX))


def has_splines(model: BoostModel) -> bool:
    return any(learner is not None and not isinstance(learner, LinearLearner) for learner in model.learners)


def _link_predict(model: BoostModel, Z: np.ndarray, at_m: int) -> np.ndarray:
    f = np.full(Z.shape[0], model.offset)
    for j, params in model.summed_params(at_m).items():
        f = f + model.learners[j].evaluate(params, Z[:, j])
    return f


def linear_predictor(model: BoostModel, newX, at_m: Optional[int] = None) -> np.ndarray:
    """Additive predictor after at_m iterations, without the extrapolation check."""
    return _link_predict(model, _scaled(model, newX), model._check_m(at_m))


def predict(model: BoostModel, newX, at_m: Optional[int] = None, scale: str = "link") -> np.ndarray:
    """Additive predictor (or its inverse link on `scale="response"`) after at_m iterations."""
    at_m = model._check_m(at_m)
    if scale not in ("link", "response"):
        raise DataError(f"Unknown prediction scale '{scale}'")
    Z = _scaled(model, newX)
    outside = extrapolated_components(model, newX)
    if outside:
        logger.warning(f"Spline components extrapolated linearly: {', '.join(outside)}")
    f = _link_predict(model, Z, at_m)
    return model.family.response(f) if scale == "response" else f


def truncate(model: BoostModel, m: int) -> BoostModel:
    """The model after its first m iterations."""
    if not 0 <= m <= model.m_stop:
        raise ModelError(f"Cannot truncate a model with m_stop={model.m_stop} to {m}")
    return replace(model, path=model.path[:m], risk=model.risk[:m + 1])


def aggregate_coefficients(model: BoostModel, at_m: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """Intercept and per-component slopes of an all-linear model, on the original scale."""
    sums = model.summed_params(at_m)
    intercept = model.offset
    coefficients = np.zeros(model.p)
    for j, params in sums.items():
        learner = model.learners[j]
        if not isinstance(learner, LinearLearner):
            raise ModelError(
                f"Component '{model.names[j]}' uses a {learner.kind} learner; "
                f"use partial_effect for non-linear terms"
            )
        if learner.include_intercept:
            intercept += params[0]
            coefficients[j] = params[1]
        else:
            coefficients[j] = params[0]
    return model.scaling.destandardize_coefficients(intercept, coefficients)


def coefficient_path(model: BoostModel) -> pd.DataFrame:
    """Aggregated intercept and coefficients at every m = 0..m_stop."""
    rows = []
    for m in range(model.m_stop + 1):
        intercept, coefficients = aggregate_coefficients(model, m)
        rows.append([m, intercept, *coefficients])
    return pd.DataFrame(rows, columns=["m", "(Intercept)", *model.names])


@dataclass(frozen=True, eq=False)
class PartialEffect:
    name: str
    grid: np.ndarray
    effect: np.ndarray
    selected: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({self.name: self.grid, "effect": self.effect})


def partial_effect(model: BoostModel, j: int, grid, at_m: Optional[int] = None) -> PartialEffect:
    """Contribution of component j on `grid`, centered over its training values."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DataError("Partial effect grid is empty")
    if not 0 <= j < model.p:
        raise ModelError(f"Component index {j} outside 0..{model.p - 1}")
    params = model.summed_params(at_m).get(j)
    if params is None:
        return PartialEffect(name=model.names[j], grid=grid, effect=np.zeros_like(grid), selected=False)
    learner = model.learners[j]
    z = (grid - model.scaling.means[j]) / model.scaling.sds[j]
    effect = learner.evaluate(params, z) - float(model.design_means[j] @ params)
    return PartialEffect(name=model.names[j], grid=grid, effect=effect, selected=True)


def risk_path(model: BoostModel, d: Dataset) -> np.ndarray:
    """Empirical risk of the fit on `d` at m = 0..m_stop."""
    model.family.check_response(d.response)
    Z = _scaled(model, d.predictors)
    f = np.full(d.n, model.offset)
    risks = [model.family.empirical_risk(d.y, f)]
    for entry in model.path:
        learner = model.learners[entry.component]
        f = f + model.step_length * learner.evaluate(entry.params, Z[:, entry.component])
        risks.append(model.family.empirical_risk(d.y, f))
    return np.array(risks)


def selection_frequencies(model: BoostModel, at_m: Optional[int] = None) -> Dict[str, float]:
    """Share of the first at_m iterations that selected each component."""
    at_m = model._check_m(at_m)
    if at_m == 0:
        return {}
    counts = np.bincount([e.component for e in model.path[:at_m]], minlength=model.p)
    return {model.names[j]: counts[j] / at_m for j in np.flatnonzero(counts)}
