"""Component-wise likelihood-based boosting.

Each step proposes, for every penalized covariate, a one-step penalized
scoring update of a single coefficient with the current linear predictor as
offset, and keeps the covariate whose candidate model fits best: the lowest
deviance for generalized linear models, the largest penalized score
statistic for the Cox model. Unpenalized covariates (and the GLM intercept)
are estimated jointly at the start and refreshed by one unpenalized
scoring step after every boosting step.

The candidate objective is l(gamma) - lam/2 * gamma^2, so the update is
U / (I + lam); `penalty_from_stepsize` turns a step size nu into lam.

A GLM component may instead enter as a P-spline. Its candidate update is
(B'WB + K)^-1 B'(y - mu) with K = (lam/n) B'B + (1 + lam/n) lam_s P, where
lam_s is the spline penalty calibrated to the target df. For a Gaussian
response this is the smoother of the same P-spline shrunken by nu, which
matches a gradient-boosting step with step length nu.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit, logit, xlogy

from config import settings
from ..models.dataset import Dataset, ResponseKind, Scaling
from ..models.errors import DataError, ModelError, NumericError
from ..utils.helpers import standardize as standardize_dataset
from .baselearners import LearnerSpec, PSplineLearner, build_learner
from .baselearners import extrapolation_flags as learner_flags

logger = logging.getLogger(__name__)

ENGINE_GLM = "likelihood-glm"
ENGINE_COX = "likelihood-cox"
Z_95 = 1.959963984540054
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100


@dataclass(frozen=True)
class PenaltySpec:
    """Either an explicit penalty `lam` or a step size `nu` in (0, 1)."""

    lam: Optional[float] = None
    nu: Optional[float] = None

    def __post_init__(self):
        if (self.lam is None) == (self.nu is None):
            raise DataError("Give exactly one of a penalty (lambda) or a step size (nu)")
        if self.nu is not None and not 0.0 < self.nu < 1.0:
            raise DataError(f"Step size nu must lie in (0, 1), got {self.nu}")
        if self.lam is not None and self.lam < 0:
            raise DataError(f"Penalty must be nonnegative, got {self.lam}")

    def resolve(self, d: Dataset) -> float:
        return float(self.lam) if self.lam is not None else penalty_from_stepsize(self.nu, d)


def penalty_from_stepsize(nu: float, d: Dataset) -> float:
    """Penalty giving roughly step size nu: events*(1/nu - 1) for survival data, n*(1/nu - 1) otherwise."""
    if not 0.0 < nu < 1.0:
        raise DataError(f"Step size nu must lie in (0, 1), got {nu}")
    if d.response.kind is ResponseKind.SURVIVAL:
        events = d.response.n_events
        if events == 0:
            raise DataError("Survival data without events")
        return events * (1.0 / nu - 1.0)
    return d.n * (1.0 / nu - 1.0)


class GlmFamily(ABC):
    """Exponential family with canonical link for the GLM engine."""

    name: str = ""
    fixed_dispersion: bool = True

    @abstractmethod
    def mean(self, eta: np.ndarray) -> np.ndarray:
        """Inverse link."""

    @abstractmethod
    def variance(self, mu: np.ndarray) -> np.ndarray:
        """Variance function, equal to the working weights under the canonical link."""

    @abstractmethod
    def deviance(self, y: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """Deviance summed over axis 0."""

    @abstractmethod
    def intercept(self, y: np.ndarray) -> float:
        """Maximum-likelihood intercept of the intercept-only model."""

    def prepare(self, d: Dataset) -> np.ndarray:
        if d.response.kind is not ResponseKind.CONTINUOUS:
            raise DataError(f"Family '{self.name}' requires a continuous response")
        return np.asarray(d.y, dtype=float)


class Gaussian(GlmFamily):
    name = "gaussian"
    fixed_dispersion = False

    def mean(self, eta):
        return eta

    def variance(self, mu):
        return np.ones_like(mu)

    def deviance(self, y, mu):
        return np.sum((y - mu) ** 2, axis=0)

    def intercept(self, y):
        return float(np.mean(y))


class Binomial(GlmFamily):
    name = "binomial"

    def prepare(self, d):
        if d.response.kind is not ResponseKind.BINARY:
            raise DataError("Family 'binomial' requires a binary response")
        return (np.asarray(d.y) + 1.0) / 2.0

    def mean(self, eta):
        return expit(eta)

    def variance(self, mu):
        return mu * (1.0 - mu)

    def deviance(self, y, mu):
        return -2.0 * np.sum(xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu), axis=0)

    def intercept(self, y):
        share = float(np.mean(y))
        if share <= 0.0 or share >= 1.0:
            raise NumericError("Binary response contains a single class; the intercept diverges")
        return float(logit(share))


class Poisson(GlmFamily):
    name = "poisson"

    def prepare(self, d):
        y = super().prepare(d)
        if np.any(y < 0):
            raise DataError("Family 'poisson' requires a nonnegative response")
        return y

    def mean(self, eta):
        return np.exp(eta)

    def variance(self, mu):
        return mu

    def deviance(self, y, mu):
        return 2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) - (y - mu), axis=0)

    def intercept(self, y):
        average = float(np.mean(y))
        if average <= 0.0:
            raise NumericError("All-zero count response; the intercept diverges")
        return float(np.log(average))


GLM_FAMILIES = {"gaussian": Gaussian, "binomial": Binomial, "logistic": Binomial, "poisson": Poisson}


def glm_family(name: str) -> GlmFamily:
    try:
        return GLM_FAMILIES[name.strip().lower()]()
    except KeyError:
        raise DataError(f"Unknown GLM family '{name}'; choose gaussian, binomial or poisson")


class _RiskSets:
    """Breslow risk sets: for every event, all subjects with time >= its time."""

    def __init__(self, time: np.ndarray, status: np.ndarray):
        self.order = np.argsort(-np.asarray(time), kind="stable")
        ordered = np.asarray(time)[self.order]
        last = np.flatnonzero(np.r_[ordered[1:] != ordered[:-1], True])
        self.end = np.repeat(last, np.diff(np.r_[-1, last]))
        self.events = np.asarray(status)[self.order] == 1

    def sums(self, values: np.ndarray) -> np.ndarray:
        """Risk-set sums of `values` (rows = subjects), one row per event."""
        totals = np.cumsum(values[self.order], axis=0)
        return totals[self.end][self.events]

    def at_events(self, values: np.ndarray) -> np.ndarray:
        return values[self.order][self.events]


def _cox_loglik(rs: _RiskSets, eta: np.ndarray) -> float:
    shift = float(eta.max())
    s0 = rs.sums(np.exp(eta - shift))
    return float(np.sum(rs.at_events(eta) - shift - np.log(s0)))


def cox_partial_loglik(time, status, eta) -> float:
    """Breslow partial log-likelihood of a linear predictor."""
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not status.any():
        raise DataError("Partial likelihood needs at least one event")
    return _cox_loglik(_RiskSets(time, status), eta)


def _cox_score_information(rs: _RiskSets, eta: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column score and observed information at eta."""
    w = np.exp(eta - eta.max())
    s0 = rs.sums(w)[:, None]
    xbar = rs.sums(w[:, None] * X) / s0
    score = np.sum(rs.at_events(X) - xbar, axis=0)
    information = np.sum(rs.sums(w[:, None] * X ** 2) / s0 - xbar ** 2, axis=0)
    return score, information


def _cox_block_newton(rs: _RiskSets, eta: np.ndarray, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Joint score vector and information matrix for the columns of U."""
    w = np.exp(eta - eta.max())
    s0 = rs.sums(w)
    ubar = rs.sums(w[:, None] * U) / s0[:, None]
    score = np.sum(rs.at_events(U) - ubar, axis=0)
    outer = rs.sums(w[:, None, None] * U[:, :, None] * U[:, None, :]) / s0[:, None, None]
    information = np.sum(outer - ubar[:, :, None] * ubar[:, None, :], axis=0)
    return score, information


def _newton_step(score: np.ndarray, information: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.solve(information, score, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericError(f"Singular information matrix for {what}: {e}")


@dataclass(frozen=True, eq=False)
class LikStep:
    component: int
    gamma: float
    # spline coefficients of the update; None for a linear component
    params: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class LikBoostModel:
    engine: str
    family: str
    lam: float
    names: Tuple[str, ...]
    # training means of the candidate columns; candidates enter centered
    centers: np.ndarray
    unpenalized: Tuple[int, ...]
    path: Tuple[LikStep, ...]
    # unpenalized block (GLM: intercept first) after each step, shape (m_stop+1, k)
    block_path: np.ndarray
    # deviance (GLM) or partial log-likelihood (Cox) at m = 0..m_stop
    criterion: np.ndarray
    scaling: Scaling
    df: Optional[np.ndarray] = None
    param_cov: Optional[np.ndarray] = None
    dispersion: float = 1.0
    nu: Optional[float] = None
    # per component a PSplineLearner or None (linear); empty when all are linear
    learners: Tuple[Optional[PSplineLearner], ...] = ()
    # mean training basis row of each spline component, for centering effects
    design_means: Tuple[Optional[np.ndarray], ...] = ()

    @property
    def m_stop(self) -> int:
        return len(self.path)

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def has_intercept(self) -> bool:
        return self.engine == ENGINE_GLM

    @property
    def has_splines(self) -> bool:
        return any(learner is not None for learner in self.learners)

    @property
    def block_names(self) -> List[str]:
        names = [self.names[j] for j in self.unpenalized]
        return ["(Intercept)"] + names if self.has_intercept else names

    def spline(self, j: int) -> Optional[PSplineLearner]:
        return self.learners[j] if self.learners else None

    def check_m(self, at_m: Optional[int]) -> int:
        if at_m is None:
            return self.m_stop
        if not 0 <= at_m <= self.m_stop:
            raise ModelError(f"Step {at_m} outside 0..{self.m_stop}")
        return int(at_m)

    def gammas(self, at_m: Optional[int] = None) -> np.ndarray:
        """Summed boosted coefficients per linear component (centered, fitting scale)."""
        at_m = self.check_m(at_m)
        totals = np.zeros(self.p)
        for step in self.path[:at_m]:
            if step.params is None:
                totals[step.component] += step.gamma
        return totals

    def spline_params(self, at_m: Optional[int] = None) -> Dict[int, np.ndarray]:
        """Summed spline coefficients per selected spline component."""
        at_m = self.check_m(at_m)
        totals: Dict[int, np.ndarray] = {}
        for step in self.path[:at_m]:
            if step.params is not None:
                totals[step.component] = totals.get(step.component, 0.0) + step.params
        return {j: totals[j] for j in sorted(totals)}

    def active(self, at_m: Optional[int] = None) -> List[int]:
        """Boosted components with a nonzero contribution after at_m steps."""
        linear = set(np.flatnonzero(self.gammas(at_m)).tolist())
        return sorted(linear | set(self.spline_params(at_m)))

    def param_slices(self) -> List[slice]:
        """Rows of `param_cov` for each component, following the unpenalized block."""
        start = len(self.block_names)
        slices = []
        for j in range(self.p):
            learner = self.spline(j)
            width = 1 if learner is None else learner.n_basis
            slices.append(slice(start, start + width))
            start += width
        return slices


def _block_design(Z: np.ndarray, unpenalized: Sequence[int], intercept: bool) -> np.ndarray:
    columns = [Z[:, j] for j in unpenalized]
    if intercept:
        columns.insert(0, np.ones(Z.shape[0]))
    if not columns:
        return np.zeros((Z.shape[0], 0))
    return np.column_stack(columns)


def _candidates(d: Dataset, unpenalized: Sequence[int], centers: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centered candidate matrix and the component index of each of its columns."""
    penalized = np.array([j for j in range(d.p) if j not in set(unpenalized)], dtype=int)
    if penalized.size == 0:
        return np.zeros((d.n, 0)), penalized
    X = d.predictors[:, penalized] - centers[penalized]
    keep = np.sum(X ** 2, axis=0) > 1e-12 * np.maximum(1.0, np.sum(d.predictors[:, penalized] ** 2, axis=0))
    for j in penalized[~keep]:
        logger.warning(f"Component '{d.names[j]}' has zero variance; excluded from boosting")
    return X[:, keep], penalized[keep]


def _prepare(d: Dataset, standardize: bool, lam: float,
             unpenalized: Sequence[int]) -> Tuple[Dataset, Scaling, np.ndarray]:
    scaling = Scaling.identity(d.p)
    if standardize:
        d, scaling = standardize_dataset(d, ddof=0)
    penalized = d.p - len(unpenalized)
    if lam <= 0.0 and penalized > d.n:
        raise DataError(f"A positive penalty is required when p ({penalized}) exceeds n ({d.n})")
    return d, scaling, d.predictors.mean(axis=0)


@dataclass(eq=False)
class _SplineCandidate:
    component: int
    learner: PSplineLearner
    basis: np.ndarray
    # K = (lam/n) B'B + (1 + lam/n) lam_s P
    penalty: np.ndarray


def _spline_candidates(d: Dataset, specs: Optional[Sequence[LearnerSpec]], components: np.ndarray,
                       lam: float) -> Tuple[List[_SplineCandidate], np.ndarray]:
    """Spline candidates for columns whose LearnerSpec is pspline, and a mask of the columns left linear."""
    linear = np.ones(components.size, dtype=bool)
    if specs is None:
        return [], linear
    if len(specs) != d.p:
        raise DataError(f"Expected {d.p} learner specs, got {len(specs)}")
    splines = []
    for position, j in enumerate(components):
        spec = specs[j]
        if spec.kind != "pspline":
            continue
        learner = build_learner(spec, d.column(j), int(j), name=d.names[j])
        if not isinstance(learner, PSplineLearner):
            continue
        B = learner.basis
        ratio = lam / d.n
        penalty = ratio * (B.T @ B) + (1.0 + ratio) * learner.lam * learner.penalty()
        splines.append(_SplineCandidate(component=int(j), learner=learner, basis=B, penalty=penalty))
        linear[position] = False
    return splines, linear


def _refresh_block(family: GlmFamily, y: np.ndarray, U: np.ndarray, eta: np.ndarray) -> np.ndarray:
    mu = family.mean(eta)
    W = family.variance(mu)
    return _newton_step(U.T @ (y - mu), U.T @ (W[:, None] * U), "the unpenalized block")


def fit_glm(
    d: Dataset,
    family: GlmFamily,
    pen: PenaltySpec,
    m_stop: int = settings.DEFAULT_MSTOP,
    standardize: bool = False,
    track_hat: bool = True,
    learners: Optional[Sequence[LearnerSpec]] = None,
) -> LikBoostModel:
    """Likelihood-based boosting for a generalized linear (or additive) model.

    `learners` gives one LearnerSpec per column; columns with a pspline
    spec enter as penalized B-spline candidates, all others as single
    centered coefficients. With `track_hat` the cumulative hat matrix is
    propagated through every step, giving degrees of freedom per step and
    the covariance used by `confidence_bands`.
    """
    if m_stop < 0:
        raise DataError(f"m_stop must be nonnegative, got {m_stop}")
    y = family.prepare(d)
    lam = pen.resolve(d)
    unpenalized = tuple(sorted(d.unpenalized))
    d, scaling, centers = _prepare(d, standardize, lam, unpenalized)
    X, components = _candidates(d, unpenalized, centers)
    splines, linear = _spline_candidates(d, learners, components, lam)
    X, components = X[:, linear], components[linear]
    candidate_components = np.r_[components, [c.component for c in splines]].astype(int)
    U = _block_design(d.predictors, unpenalized, intercept=True)
    n = d.n

    beta = np.zeros(U.shape[1])
    beta[0] = family.intercept(y)
    eta = U @ beta
    for _ in range(NEWTON_MAX_ITER):
        delta = _refresh_block(family, y, U, eta)
        beta = beta + delta
        eta = U @ beta
        if np.max(np.abs(delta)) < NEWTON_TOL:
            break
    else:
        logger.warning("Unpenalized block did not converge at initialization")

    block_path = [beta.copy()]
    criterion = [float(family.deviance(y, family.mean(eta)))]
    path: List[LikStep] = []

    if track_hat:
        W = family.variance(family.mean(eta))
        gram_inv_Ut = linalg.solve(U.T @ (W[:, None] * U), U.T, assume_a="pos")
        R = U @ gram_inv_Ut
        A_block = gram_inv_Ut.copy()
        A: Dict[int, np.ndarray] = {}
        df = [float(np.sum(W * np.diag(R)))]

    logger.info(f"Likelihood boosting (GLM): family={family.name}, lambda={lam:.6g}, "
                f"m_stop={m_stop}, {X.shape[1]} linear and {len(splines)} spline candidate components")
    for m in range(m_stop):
        if candidate_components.size == 0:
            raise NumericError("No penalized component available for boosting")
        mu = family.mean(eta)
        W = family.variance(mu)
        residual = y - mu
        denominator = np.sum(W[:, None] * X ** 2, axis=0) + lam
        gamma = (X.T @ residual) / denominator
        deviances = list(family.deviance(y[:, None], family.mean(eta[:, None] + X * gamma)))
        updates = []
        for c in splines:
            weighted = c.basis.T @ (W[:, None] * c.basis) + c.penalty
            params = _newton_step(c.basis.T @ residual, weighted,
                                  f"the spline candidate '{d.names[c.component]}'")
            updates.append(params)
            deviances.append(float(family.deviance(y, family.mean(eta + c.basis @ params))))
        # lowest deviance; ties go to the lowest component index
        best = int(np.lexsort((candidate_components, np.asarray(deviances)))[0])
        j = int(candidate_components[best])

        if best < X.shape[1]:
            x = X[:, best]
            if track_hat:
                row = (x - R.T @ (W * x)) / denominator[best]
                R = R + np.outer(x, row)
                A[j] = A.get(j, 0.0) + row[None, :]
            eta = eta + gamma[best] * x
            path.append(LikStep(component=j, gamma=float(gamma[best])))
        else:
            c = splines[best - X.shape[1]]
            params = updates[best - X.shape[1]]
            if track_hat:
                weighted = c.basis.T @ (W[:, None] * c.basis) + c.penalty
                G = _newton_step(c.basis.T - (c.basis.T * W) @ R, weighted,
                                 f"the spline candidate '{d.names[j]}'")
                R = R + c.basis @ G
                A[j] = A.get(j, 0.0) + G
            eta = eta + c.basis @ params
            path.append(LikStep(component=j, gamma=0.0, params=params))

        delta = _refresh_block(family, y, U, eta)
        beta = beta + delta
        eta = eta + U @ delta

        if track_hat:
            W = family.variance(family.mean(eta))
            gram_inv_Ut = linalg.solve(U.T @ (W[:, None] * U), U.T, assume_a="pos")
            update = gram_inv_Ut - (gram_inv_Ut * W) @ R
            R = R + U @ update
            A_block = A_block + update
            df.append(float(np.sum(family.variance(family.mean(eta)) * np.diag(R))))

        block_path.append(beta.copy())
        criterion.append(float(family.deviance(y, family.mean(eta))))
        logger.debug(f"Step {m + 1}: '{d.names[j]}' deviance={criterion[-1]:.6g}")

    spline_learners: Tuple[Optional[PSplineLearner], ...] = ()
    design_means: Tuple[Optional[np.ndarray], ...] = ()
    if splines:
        by_component = {c.component: c for c in splines}
        spline_learners = tuple(by_component[j].learner if j in by_component else None for j in range(d.p))
        design_means = tuple(by_component[j].basis.mean(axis=0) if j in by_component else None
                             for j in range(d.p))
    model = LikBoostModel(
        engine=ENGINE_GLM,
        family=family.name,
        lam=lam,
        names=d.names,
        centers=centers,
        unpenalized=unpenalized,
        path=tuple(path),
        block_path=np.array(block_path),
        criterion=np.array(criterion),
        scaling=scaling,
        nu=pen.nu,
        learners=spline_learners,
        design_means=design_means,
    )
    if not track_hat:
        return model

    df = np.array(df)
    dispersion = 1.0
    if not family.fixed_dispersion:
        dispersion = criterion[-1] / max(n - df[-1], 1.0)
    widths = [s.stop - s.start for s in model.param_slices()]
    operators = np.vstack([A_block] + [np.broadcast_to(A.get(j, 0.0), (widths[j], n)) for j in range(d.p)])
    variance = family.variance(family.mean(eta))
    param_cov = dispersion * (operators * variance) @ operators.T
    return replace(model, df=df, param_cov=param_cov, dispersion=float(dispersion))


def fit_cox(
    d: Dataset,
    pen: PenaltySpec,
    m_stop: int = settings.DEFAULT_MSTOP,
    unpenalized: Optional[Sequence[int]] = None,
    standardize: bool = False,
) -> LikBoostModel:
    """Likelihood-based boosting for the Cox model, selecting by penalized score statistic."""
    if d.response.kind is not ResponseKind.SURVIVAL:
        raise DataError("The Cox engine requires a survival response")
    if m_stop < 0:
        raise DataError(f"m_stop must be nonnegative, got {m_stop}")
    if d.response.n_events == 0:
        raise DataError("Survival data without events")
    lam = pen.resolve(d)
    unpenalized = tuple(sorted(d.unpenalized if unpenalized is None else unpenalized))
    if any(j < 0 or j >= d.p for j in unpenalized):
        raise DataError("Unpenalized indices must refer to existing columns")
    d, scaling, centers = _prepare(d, standardize, lam, unpenalized)
    X, components = _candidates(d, unpenalized, centers)
    U = _block_design(d.predictors, unpenalized, intercept=False)
    if U.shape[1] and np.linalg.matrix_rank(U) < U.shape[1]:
        raise DataError("Unpenalized covariates are not of full rank")
    rs = _RiskSets(d.response.time, d.response.status)

    beta = np.zeros(U.shape[1])
    eta = np.zeros(d.n)
    if U.shape[1]:
        current = _cox_loglik(rs, eta)
        for _ in range(NEWTON_MAX_ITER):
            score, information = _cox_block_newton(rs, eta, U)
            delta = _newton_step(score, information, "the mandatory covariates")
            step = 1.0
            while True:
                trial = _cox_loglik(rs, U @ (beta + step * delta))
                if trial >= current - 1e-12 or step < 1e-8:
                    break
                step *= 0.5
            beta = beta + step * delta
            eta = U @ beta
            current = trial
            if np.max(np.abs(step * delta)) < NEWTON_TOL:
                break
        else:
            logger.warning("Mandatory covariates did not converge at initialization")

    block_path = [beta.copy()]
    criterion = [_cox_loglik(rs, eta)]
    path: List[LikStep] = []
    logger.info(f"Likelihood boosting (Cox): lambda={lam:.6g}, m_stop={m_stop}, "
                f"{X.shape[1]} candidate components, {len(unpenalized)} mandatory")
    for m in range(m_stop):
        if X.shape[1] == 0:
            raise NumericError("No penalized component available for boosting")
        score, information = _cox_score_information(rs, eta, X)
        denominator = information + lam
        if np.any(denominator <= 0):
            raise NumericError("Non-positive penalized information; increase the penalty")
        statistic = score ** 2 / denominator
        best = int(np.argmax(statistic))
        j = int(components[best])
        gamma = float(score[best] / denominator[best])
        eta = eta + gamma * X[:, best]
        path.append(LikStep(component=j, gamma=gamma))

        if U.shape[1]:
            score_u, information_u = _cox_block_newton(rs, eta, U)
            delta = _newton_step(score_u, information_u, "the mandatory covariates")
            beta = beta + delta
            eta = eta + U @ delta

        block_path.append(beta.copy())
        criterion.append(_cox_loglik(rs, eta))
        if criterion[-1] < criterion[-2] - 1e-10:
            logger.warning(f"Partial log-likelihood decreased at step {m + 1}: "
                           f"{criterion[-2]:.6f} -> {criterion[-1]:.6f}")
        logger.debug(f"Step {m + 1}: '{d.names[j]}' gamma={gamma:.6g} "
                     f"partial log-likelihood={criterion[-1]:.6f}")

    return LikBoostModel(
        engine=ENGINE_COX,
        family="cox",
        lam=lam,
        names=d.names,
        centers=centers,
        unpenalized=unpenalized,
        path=tuple(path),
        block_path=np.array(block_path).reshape(m_stop + 1, U.shape[1]),
        criterion=np.array(criterion),
        scaling=scaling,
        nu=pen.nu,
    )


def _scaled(model: LikBoostModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ModelError(f"Expected a matrix with {model.p} columns, got shape {X.shape}")
    return model.scaling.apply(X)


def linear_predictor(model: LikBoostModel, newX, at_m: Optional[int] = None) -> np.ndarray:
    at_m = model.check_m(at_m)
    Z = _scaled(model, newX)
    U = _block_design(Z, model.unpenalized, model.has_intercept)
    eta = U @ model.block_path[at_m]
    gammas = model.gammas(at_m)
    for j in np.flatnonzero(gammas):
        eta = eta + gammas[j] * (Z[:, j] - model.centers[j])
    for j, params in model.spline_params(at_m).items():
        eta = eta + model.spline(j).evaluate(params, Z[:, j])
    return eta


def extrapolation_flags(model: LikBoostModel, newX) -> List[str]:
    """Per row, the spline components evaluated outside their training range."""
    Z = _scaled(model, newX)
    if not model.has_splines:
        return [""] * Z.shape[0]
    return learner_flags(model.learners, model.names, Z)


def predict_lik(model: LikBoostModel, newX, at_m: Optional[int] = None, scale: str = "link") -> np.ndarray:
    """Linear predictor, or on `scale="response"` the mean (GLM) or relative risk (Cox)."""
    if scale not in ("link", "response"):
        raise DataError(f"Unknown prediction scale '{scale}'")
    eta = linear_predictor(model, newX, at_m)
    outside = sorted({name for row in extrapolation_flags(model, newX) for name in row.split(";") if name})
    if outside:
        logger.warning(f"Spline components extrapolated linearly: {', '.join(outside)}")
    if scale == "link":
        return eta
    if model.engine == ENGINE_COX:
        return np.exp(eta)
    return glm_family(model.family).mean(eta)


def truncate_lik(model: LikBoostModel, m: int) -> LikBoostModel:
    if not 0 <= m <= model.m_stop:
        raise ModelError(f"Cannot truncate a model with m_stop={model.m_stop} to {m}")
    if m == model.m_stop:
        return model
    return replace(
        model,
        path=model.path[:m],
        block_path=model.block_path[:m + 1],
        criterion=model.criterion[:m + 1],
        df=None if model.df is None else model.df[:m + 1],
        param_cov=None,
    )


def coefficients_lik(model: LikBoostModel, at_m: Optional[int] = None) -> Tuple[Optional[float], np.ndarray]:
    """Intercept (GLM only) and coefficients of all components on the original scale."""
    at_m = model.check_m(at_m)
    if model.has_splines:
        raise ModelError("Model has spline components; use confidence_bands for their effects")
    coefficients = model.gammas(at_m)
    block = model.block_path[at_m]
    offset_shift = float(np.dot(coefficients, model.centers))
    unpen = block[1:] if model.has_intercept else block
    for value, j in zip(unpen, model.unpenalized):
        coefficients[j] += value
    if model.has_intercept:
        intercept, slopes = model.scaling.destandardize_coefficients(block[0] - offset_shift, coefficients)
        return intercept, slopes
    _, slopes = model.scaling.destandardize_coefficients(0.0, coefficients)
    return None, slopes


def lik_risk(model: LikBoostModel, d: Dataset, at_m: Optional[int] = None) -> float:
    """Per-observation out-of-sample loss: half deviance (GLM) or negative partial log-likelihood (Cox)."""
    eta = linear_predictor(model, d.predictors, at_m)
    if model.engine == ENGINE_COX:
        if d.response.n_events == 0:
            raise DataError("Held-out data without events")
        return -cox_partial_loglik(d.response.time, d.response.status, eta) / d.n
    family = glm_family(model.family)
    return float(family.deviance(family.prepare(d), family.mean(eta))) / (2.0 * d.n)


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    name: str
    table: pd.DataFrame
    selected: bool

    def to_frame(self) -> pd.DataFrame:
        return self.table


def confidence_bands(model: LikBoostModel, j: int, grid) -> ConfidenceBand:
    """Approximate pointwise 95% bands for the effect of component j.

    A linear effect is gamma_j * (x - mean x_j); a spline effect is the
    boosted spline centered at its training mean. Its variance comes from the
    covariance of the fitted parameters propagated through the boosting
    steps. A model without boosting steps reports the intercept-only fit.
    """
    if model.engine != ENGINE_GLM:
        raise ModelError("Confidence bands are available for the GLM engine only")
    if model.param_cov is None:
        raise ModelError("Model carries no hat-matrix information; refit with hat tracking")
    if not 0 <= j < model.p:
        raise ModelError(f"Component index {j} outside 0..{model.p - 1}")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DataError("Grid is empty")
    name = model.names[j]
    rows = model.param_slices()[j]
    z = (grid - model.scaling.means[j]) / model.scaling.sds[j]

    if model.m_stop == 0:
        estimate = np.full(grid.shape, model.block_path[0][0])
        se = np.full(grid.shape, np.sqrt(max(model.param_cov[0, 0], 0.0)))
        selected = True
    elif j in model.unpenalized:
        position = 1 + model.unpenalized.index(j)
        estimate = model.block_path[-1][position] * z
        se = np.abs(z) * np.sqrt(max(model.param_cov[position, position], 0.0))
        selected = True
    elif not any(step.component == j for step in model.path):
        logger.warning(f"Component '{name}' was never selected; band is zero")
        estimate = np.zeros_like(grid)
        se = np.zeros_like(grid)
        selected = False
    elif model.spline(j) is not None:
        design = model.spline(j).design(z) - model.design_means[j]
        estimate = design @ model.spline_params()[j]
        cov = model.param_cov[rows, rows]
        se = np.sqrt(np.clip(np.einsum("ik,kl,il->i", design, cov, design), 0.0, None))
        selected = True
    else:
        z = z - model.centers[j]
        estimate = model.gammas()[j] * z
        se = np.abs(z) * np.sqrt(max(model.param_cov[rows.start, rows.start], 0.0))
        selected = True
    table = pd.DataFrame({
        "value": grid,
        "estimate": estimate,
        "lower": estimate - Z_95 * se,
        "upper": estimate + Z_95 * se,
    })
    return ConfidenceBand(name=name, table=table, selected=selected)


def summary_lik(model: LikBoostModel, n: int) -> Dict[str, object]:
    """Per-step fit criteria and the steps minimizing AICc and BIC."""
    steps = np.arange(model.m_stop + 1)
    nonzero = [len(model.active(m)) + len(model.unpenalized) for m in steps]
    table = pd.DataFrame({"m": steps, "nonzero": nonzero})
    summary: Dict[str, object] = {"engine": model.engine, "m_stop": model.m_stop}
    if model.engine == ENGINE_COX:
        table["partial_loglik"] = model.criterion
        summary.update(partial_loglik=float(model.criterion[-1]), nonzero=nonzero[-1],
                       mandatory=len(model.unpenalized), table=table)
        return summary
    table["deviance"] = model.criterion
    if model.df is not None:
        df = model.df
        table["df"] = df
        table["bic"] = model.criterion + np.log(n) * df
        summary["bic_m"] = int(steps[np.argmin(table["bic"].to_numpy())])
        if model.family == "gaussian":
            with np.errstate(divide="ignore", invalid="ignore"):
                denom = 1.0 - (df + 2.0) / n
                aicc = np.where(denom > 0, np.log(model.criterion / n) + (1.0 + df / n) / denom, np.inf)
            table["aicc"] = aicc
            summary["aicc_m"] = int(steps[np.argmin(aicc)])
    summary.update(deviance=float(model.criterion[-1]), nonzero=nonzero[-1], table=table)
    return summary
