"""Component-wise base-learners.

Linear and P-spline learners are linear smoothers: for a column x and
weights w they expose a design matrix X (n x k) and a k x n operator S such
that the fitted parameters are S u and the fitted values X S u, so the hat
matrix is X S. Stumps are the classification learners used by AdaBoost.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.optimize import bisect

from config import settings
from ..models.errors import DataError, NumericError

logger = logging.getLogger(__name__)

RIDGE = 1e-10
LOG_LAMBDA_RANGE = (-20.0, 40.0)
DF_TOLERANCE = 1e-6


def _weights(n: int, w: Optional[np.ndarray]) -> np.ndarray:
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise DataError(f"Weights must have length {n}")
    return w


def _solve_spd(lhs: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.solve(lhs, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        scale = max(float(np.trace(lhs)) / lhs.shape[0], 1.0)
        logger.warning(f"Singular system in {what}; retrying with ridge {RIDGE}")
        try:
            return linalg.solve(lhs + RIDGE * scale * np.eye(lhs.shape[0]), rhs, assume_a="sym")
        except linalg.LinAlgError as e:
            raise NumericError(f"Singular system in {what}: {e}")


@dataclass(frozen=True, eq=False)
class LinearLearner:
    """Simple linear regression on one component, with its own intercept by default."""

    component: int
    include_intercept: bool = True
    kind: str = field(default="linear", init=False)

    def design(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.include_intercept:
            return np.column_stack([np.ones_like(x), x])
        return x[:, None]

    def is_fittable(self, x: np.ndarray, w: Optional[np.ndarray] = None) -> bool:
        x = np.asarray(x, dtype=float)
        w = _weights(x.size, w)
        if not w.sum() > 0:
            return False
        if self.include_intercept:
            centered = x - np.average(x, weights=w)
            spread = np.dot(w, centered ** 2)
        else:
            spread = np.dot(w, x ** 2)
        return bool(spread > 1e-12 * max(1.0, np.dot(w, x ** 2)))

    def smoother(self, x: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
        """k x n operator mapping a target to the least-squares parameters."""
        x = np.asarray(x, dtype=float)
        w = _weights(x.size, w)
        if not self.is_fittable(x, w):
            raise NumericError(f"Component {self.component} has zero weighted variance")
        if not self.include_intercept:
            return (w * x / np.dot(w, x ** 2))[None, :]
        total = w.sum()
        mean = np.dot(w, x) / total
        centered = x - mean
        slope_row = w * centered / np.dot(w, centered ** 2)
        intercept_row = w / total - mean * slope_row
        return np.vstack([intercept_row, slope_row])

    def fit(self, x: np.ndarray, u: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
        return self.smoother(x, w) @ np.asarray(u, dtype=float)

    def evaluate(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.design(x) @ np.asarray(params, dtype=float)

    def extrapolated(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(x), dtype=bool)

    def spec(self) -> Dict[str, object]:
        return {"kind": self.kind, "include_intercept": self.include_intercept}


def fit_linear(x, u, w=None) -> Tuple[float, float]:
    """Weighted least-squares intercept and slope of u on x."""
    a, b = LinearLearner(component=0).fit(np.asarray(x, dtype=float), u, w)
    return float(a), float(b)


@dataclass(frozen=True, eq=False)
class PSplineLearner:
    """Cubic P-spline on equidistant knots with a difference penalty."""

    component: int
    knots: np.ndarray
    degree: int = 3
    inner_knots: int = 20
    diff_order: int = 2
    target_df: float = 4.0
    lam: float = 0.0
    basis: Optional[np.ndarray] = None
    kind: str = field(default="pspline", init=False)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def lower(self) -> float:
        return float(self.knots[self.degree])

    @property
    def upper(self) -> float:
        return float(self.knots[-self.degree - 1])

    def difference_matrix(self) -> np.ndarray:
        return np.diff(np.eye(self.n_basis), n=self.diff_order, axis=0)

    def penalty(self) -> np.ndarray:
        D = self.difference_matrix()
        return D.T @ D

    def extrapolated(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x < self.lower) | (x > self.upper)

    def design(self, x: np.ndarray) -> np.ndarray:
        """B-spline basis; outside the training range each basis function
        continues linearly from its value and slope at the boundary."""
        x = np.asarray(x, dtype=float)
        spline = BSpline(self.knots, np.eye(self.n_basis), self.degree)
        clipped = np.clip(x, self.lower, self.upper)
        B = spline(clipped)
        outside = clipped != x
        if outside.any():
            slope = spline.derivative()(clipped[outside])
            B[outside] += (x[outside] - clipped[outside])[:, None] * slope
        return B

    def with_lambda(self, lam: float) -> "PSplineLearner":
        return replace(self, lam=float(lam))

    def _gram(self, x: Optional[np.ndarray], w: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        B = self.basis if x is None else self.design(x)
        if B is None:
            raise DataError("P-spline learner has no training basis; pass the column")
        w = _weights(B.shape[0], w)
        return B, B.T @ (w[:, None] * B)

    def smoother(self, x: Optional[np.ndarray] = None, w: Optional[np.ndarray] = None) -> np.ndarray:
        B, gram = self._gram(x, w)
        w = _weights(B.shape[0], w)
        return _solve_spd(gram + self.lam * self.penalty(), B.T * w,
                          f"P-spline fit of component {self.component}")

    def fit(self, x: Optional[np.ndarray], u: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
        B, gram = self._gram(x, w)
        w = _weights(B.shape[0], w)
        rhs = B.T @ (w * np.asarray(u, dtype=float))
        return _solve_spd(gram + self.lam * self.penalty(), rhs,
                          f"P-spline fit of component {self.component}")

    def evaluate(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.design(x) @ np.asarray(params, dtype=float)

    def degrees_of_freedom(self, lam: float, w: Optional[np.ndarray] = None) -> float:
        """trace(B (B'WB + lam P)^-1 B'W)."""
        _, gram = self._gram(None, w)
        if lam == 0.0:
            return float(np.linalg.matrix_rank(gram))
        spectrum = _penalty_spectrum(gram, self.penalty(), self.diff_order)
        return float(np.sum(1.0 / (1.0 + lam * spectrum)))

    def spec(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "knots": [float(k) for k in self.knots],
            "degree": self.degree,
            "inner_knots": self.inner_knots,
            "diff_order": self.diff_order,
            "target_df": self.target_df,
            "lam": self.lam,
        }


def _penalty_spectrum(gram: np.ndarray, penalty: np.ndarray, null_dim: int) -> np.ndarray:
    """Eigenvalues s of L^-1 P L^-T with gram = L L', so df(lam) = sum 1/(1 + lam s).

    The `null_dim` smallest eigenvalues span the penalty null space and are exactly 0.
    """
    try:
        L = linalg.cholesky(gram, lower=True)
    except linalg.LinAlgError:
        scale = max(float(np.trace(gram)) / gram.shape[0], 1.0)
        logger.warning(f"Rank-deficient spline basis; adding ridge {RIDGE} for df computation")
        L = linalg.cholesky(gram + RIDGE * scale * np.eye(gram.shape[0]), lower=True)
    half = linalg.solve_triangular(L, penalty, lower=True)
    M = linalg.solve_triangular(L, half.T, lower=True)
    spectrum = np.clip(linalg.eigvalsh(0.5 * (M + M.T)), 0.0, None)
    spectrum[:null_dim] = 0.0
    return spectrum


def build_pspline(
    x,
    component: int = 0,
    degree: int = settings.DEFAULT_DEGREE,
    inner_knots: int = settings.DEFAULT_INNER_KNOTS,
    diff_order: int = settings.DEFAULT_DIFF_ORDER,
    target_df: float = settings.DEFAULT_DF,
) -> PSplineLearner:
    """Basis and difference penalty for column x; lambda is left at 0."""
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < 2:
        raise DataError(f"P-spline for component {component} needs at least 2 distinct values")
    lower, upper = float(x.min()), float(x.max())
    step = (upper - lower) / (inner_knots + 1)
    knots = lower + step * np.arange(-degree, inner_knots + degree + 2)
    knots[degree] = lower
    knots[-degree - 1] = upper
    knots.setflags(write=False)
    learner = PSplineLearner(component=component, knots=knots, degree=degree,
                             inner_knots=inner_knots, diff_order=diff_order,
                             target_df=target_df)
    basis = learner.design(x)
    basis.setflags(write=False)
    return replace(learner, basis=basis)


def calibrate_lambda(ps: PSplineLearner, target_df: float, w=None) -> float:
    """Penalty giving the smoother trace `target_df`, by bisection on log(lambda)."""
    _, gram = ps._gram(None, w)
    rank = int(np.linalg.matrix_rank(gram))
    if not ps.diff_order < target_df < rank:
        raise NumericError(
            f"Target df {target_df} for component {ps.component} is infeasible; "
            f"it must lie strictly between {ps.diff_order} and {rank}"
        )
    spectrum = _penalty_spectrum(gram, ps.penalty(), ps.diff_order)

    def excess(log_lam: float) -> float:
        return float(np.sum(1.0 / (1.0 + np.exp(log_lam) * spectrum))) - target_df

    low, high = LOG_LAMBDA_RANGE
    if excess(low) * excess(high) > 0:
        raise NumericError(f"Target df {target_df} not bracketed by log-lambda in {LOG_LAMBDA_RANGE}")
    log_lam = bisect(excess, low, high, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(excess(log_lam)) > DF_TOLERANCE:
        raise NumericError(f"Lambda calibration for component {ps.component} did not converge")
    lam = float(np.exp(log_lam))
    logger.debug(f"Component {ps.component}: df={target_df} at lambda={lam:.6g}")
    return lam


def fit_pspline(ps: PSplineLearner, u, w=None) -> np.ndarray:
    """Spline coefficients (B'WB + lam D'D)^-1 B'Wu on the training basis."""
    return ps.fit(None, u, w)


def hat_matrix(learner, x, w=None) -> np.ndarray:
    """n x n smoother matrix of a linear or P-spline learner on column x."""
    x = np.asarray(x, dtype=float)
    return learner.design(x) @ learner.smoother(x, w)


@dataclass(frozen=True)
class Stump:
    """Decision stump: polarity * sign(x_j - threshold), sign(0) = +1."""

    component: int
    threshold: float
    polarity: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        column = X[:, self.component] if X.ndim == 2 else X
        return self.polarity * np.where(column - self.threshold >= 0.0, 1.0, -1.0)


def fit_stump(X, y, w=None) -> Tuple[Stump, float]:
    """Exhaustive search for the stump with minimal weighted misclassification.

    Candidates per component are the smallest observed value (constant
    classifiers) and the midpoints between consecutive distinct values, each
    with both polarities. Returns the stump and its error as a share of the
    total weight; ties go to the lower component, lower threshold, polarity +1.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    w = _weights(y.size, w)
    if np.any(w < 0) or not w.sum() > 0:
        raise DataError("Stump weights must be nonnegative with positive sum")
    total = float(w.sum())
    tolerance = 1e-12 * total
    total_neg = float(w[y < 0].sum())

    best: Optional[Stump] = None
    best_error = np.inf
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ws = w[order]
        pos = np.where(y[order] > 0, ws, 0.0)
        neg = ws - pos
        values, starts = np.unique(xs, return_index=True)
        left_pos = np.concatenate([[0.0], np.cumsum(pos)])[starts]
        left_neg = np.concatenate([[0.0], np.cumsum(neg)])[starts]
        thresholds = np.concatenate([values[:1], 0.5 * (values[:-1] + values[1:])])
        err_plus = left_pos + (total_neg - left_neg)
        errors = np.column_stack([err_plus, total - err_plus]).ravel()
        candidate = int(np.flatnonzero(errors <= errors.min() + tolerance)[0])
        if errors[candidate] < best_error - tolerance:
            best_error = float(errors[candidate])
            best = Stump(component=j, threshold=float(thresholds[candidate // 2]),
                         polarity=1 if candidate % 2 == 0 else -1)
    return best, max(best_error, 0.0) / total


@dataclass(frozen=True)
class LearnerSpec:
    """Learner choice for one component, as given on the command line."""

    kind: str = "linear"
    df: float = settings.DEFAULT_DF
    inner_knots: int = settings.DEFAULT_INNER_KNOTS
    degree: int = settings.DEFAULT_DEGREE
    diff_order: int = settings.DEFAULT_DIFF_ORDER

    def __post_init__(self):
        if self.kind not in ("linear", "pspline"):
            raise DataError(f"Unknown learner '{self.kind}' (use linear or pspline)")


def parse_learners(default: str, names: Iterable[str], overrides: Iterable[str] = (),
                   df: float = settings.DEFAULT_DF) -> List[LearnerSpec]:
    """One LearnerSpec per column from a default kind plus `name:learner` pairs."""
    names = list(names)
    specs = [LearnerSpec(kind=default, df=df) for _ in names]
    for item in overrides:
        name, sep, kind = item.partition(":")
        if not sep or name not in names:
            raise DataError(f"Invalid learner override '{item}' (expected column:learner)")
        specs[names.index(name)] = LearnerSpec(kind=kind, df=df)
    return specs


def build_learner(spec: LearnerSpec, x: np.ndarray, component: int,
                  w: Optional[np.ndarray] = None, name: Optional[str] = None):
    """Instantiate (and for splines calibrate) the learner for one column.

    A column whose spline basis cannot reach the target df (few distinct
    values, e.g. a binary covariate) gets a linear learner instead.
    """
    if spec.kind == "linear":
        return LinearLearner(component=component)
    ps = build_pspline(x, component=component, degree=spec.degree,
                       inner_knots=spec.inner_knots, diff_order=spec.diff_order,
                       target_df=spec.df)
    try:
        lam = calibrate_lambda(ps, spec.df, w)
    except NumericError as e:
        label = name if name is not None else f"component {component}"
        logger.warning(f"{label}: {str(e)}; using a linear learner instead")
        return LinearLearner(component=component)
    return ps.with_lambda(lam)


def learner_from_spec(component: int, payload: Dict[str, object]):
    """Rebuild a learner from its serialized description (no training basis)."""
    if payload["kind"] == "linear":
        return LinearLearner(component=component,
                             include_intercept=bool(payload.get("include_intercept", True)))
    knots = np.asarray(payload["knots"], dtype=float)
    knots.setflags(write=False)
    return PSplineLearner(
        component=component,
        knots=knots,
        degree=int(payload["degree"]),
        inner_knots=int(payload["inner_knots"]),
        diff_order=int(payload["diff_order"]),
        target_df=float(payload["target_df"]),
        lam=float(payload["lam"]),
    )


def extrapolation_flags(learners: Sequence[object], names: Sequence[str], Z: np.ndarray) -> List[str]:
    """Per row of Z, the ';'-joined names of components whose learner is
    evaluated outside its training range; empty when every value is inside."""
    flags: List[List[str]] = [[] for _ in range(Z.shape[0])]
    for j, learner in enumerate(learners):
        if learner is None:
            continue
        for i in np.flatnonzero(learner.extrapolated(Z[:, j])):
            flags[i].append(names[j])
    return [";".join(row) for row in flags]
