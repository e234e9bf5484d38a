"""Component-wise gradient boosting engine."""
import logging

import numpy as np
import pytest

from boostkit.models.dataset import Dataset, ResponseVector
from boostkit.models.errors import DataError, ModelError, NumericError
from boostkit.services import gradboost
from boostkit.services.baselearners import LearnerSpec, LinearLearner, PSplineLearner
from boostkit.services.losses import GammaDevianceLoss, L2Loss, LaplaceLoss, LogisticLoss
from tests.conftest import make_binary, make_gaussian


def _single_predictor(n=40, seed=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = 0.5 + 1.7 * x + rng.normal(scale=0.3, size=n)
    return Dataset(predictors=x[:, None], names=("x",), response=ResponseVector.continuous(y))


def _ols(d):
    X = np.column_stack([np.ones(d.n), d.predictors])
    return np.linalg.solve(X.T @ X, X.T @ d.y)


class TestFit:

    def test_zero_iterations_is_constant(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=0)
        assert model.m_stop == 0
        np.testing.assert_array_equal(gradboost.predict(model, gaussian_data.predictors),
                                      np.full(gaussian_data.n, np.mean(gaussian_data.y)))
        intercept, coefficients = gradboost.aggregate_coefficients(model)
        assert intercept == model.offset
        np.testing.assert_array_equal(coefficients, 0.0)

    @pytest.mark.parametrize("sl", [0.1, 0.5, 1.0])
    @pytest.mark.parametrize("m", [1, 10, 100])
    def test_univariate_geometric_slope(self, sl, m):
        """Slope after m steps is (1 - (1 - sl)^m) times the OLS slope."""
        d = _single_predictor()
        beta = _ols(d)[1]
        slope = 0.0
        for _ in range(m):
            slope += sl * (beta - slope)
        _, coefficients = gradboost.aggregate_coefficients(gradboost.fit(d, L2Loss(), m_stop=m, sl=sl))
        assert coefficients[0] == pytest.approx(slope, abs=1e-10)
        assert coefficients[0] == pytest.approx((1 - (1 - sl) ** m) * beta, abs=1e-10)

    def test_full_step_reproduces_ols(self):
        d = _single_predictor()
        intercept, coefficients = gradboost.aggregate_coefficients(gradboost.fit(d, L2Loss(), m_stop=1, sl=1.0))
        np.testing.assert_allclose([intercept, coefficients[0]], _ols(d), atol=1e-10)

    def test_converges_to_ols(self):
        d = make_gaussian(n=200, p=5, seed=8)
        model = gradboost.fit(d, L2Loss(), m_stop=10000, sl=0.1)
        intercept, coefficients = gradboost.aggregate_coefficients(model)
        np.testing.assert_allclose(np.r_[intercept, coefficients], _ols(d), atol=1e-6)

    def test_exact_component_always_selected(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(5, 10))
        d = Dataset(predictors=X, names=tuple(f"x{j + 1}" for j in range(10)),
                    response=ResponseVector.continuous(2.0 * X[:, 2]))
        model = gradboost.fit(d, L2Loss(), m_stop=500, sl=0.1)
        assert {e.component for e in model.path} == {2}
        _, coefficients = gradboost.aggregate_coefficients(model)
        assert coefficients[2] == pytest.approx(2.0, abs=1e-10)

    def test_selects_brute_force_argmin(self, gaussian_data):
        """Every step picks the component whose least-squares fit leaves the smallest SSE."""
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=25, sl=0.1)
        X, y = gaussian_data.predictors, gaussian_data.y
        f = np.full(gaussian_data.n, model.offset)
        for entry in model.path:
            u = y - f
            sse = []
            for j in range(X.shape[1]):
                design = np.column_stack([np.ones(gaussian_data.n), X[:, j]])
                coef, *_ = np.linalg.lstsq(design, u, rcond=None)
                sse.append(np.sum((u - design @ coef) ** 2))
            assert entry.component == int(np.argmin(sse))
            f = f + 0.1 * (np.column_stack([np.ones(gaussian_data.n), X[:, entry.component]]) @ entry.params)

    def test_distinct_selected_bounded(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=3)
        assert len({e.component for e in model.path}) <= min(gaussian_data.p, 3)

    def test_deterministic(self, gaussian_data):
        first = gradboost.fit(gaussian_data, LaplaceLoss(), m_stop=40)
        second = gradboost.fit(gaussian_data, LaplaceLoss(), m_stop=40)
        assert [e.component for e in first.path] == [e.component for e in second.path]
        for a, b in zip(first.path, second.path):
            np.testing.assert_array_equal(a.params, b.params)

    def test_thread_count_does_not_change_fit(self, gaussian_data):
        specs = [LearnerSpec(kind="pspline")] * gaussian_data.p
        one = gradboost.fit(gaussian_data, L2Loss(), specs, m_stop=20, threads=1)
        four = gradboost.fit(gaussian_data, L2Loss(), specs, m_stop=20, threads=4)
        np.testing.assert_array_equal(one.risk, four.risk)

    def test_constant_column_skipped(self, gaussian_data):
        X = np.column_stack([gaussian_data.predictors, np.full(gaussian_data.n, 4.0)])
        d = Dataset(predictors=X, names=gaussian_data.names + ("const",), response=gaussian_data.response)
        model = gradboost.fit(d, L2Loss(), m_stop=30)
        assert model.skipped == ("const",)
        assert all(e.component != d.p - 1 for e in model.path)

    def test_binary_covariate_falls_back_to_linear(self, rng, caplog):
        x = rng.normal(size=60)
        group = (rng.uniform(size=60) > 0.5).astype(float)
        y = np.sin(2 * x) + 1.5 * group + 0.2 * rng.normal(size=60)
        d = Dataset(predictors=np.column_stack([x, group]), names=("x", "group"),
                    response=ResponseVector.continuous(y))
        specs = [LearnerSpec(kind="pspline"), LearnerSpec(kind="pspline")]
        with caplog.at_level(logging.WARNING):
            model = gradboost.fit(d, L2Loss(), specs, m_stop=50)
        assert isinstance(model.learners[0], PSplineLearner)
        assert isinstance(model.learners[1], LinearLearner)
        assert "group" in caplog.text and "linear learner" in caplog.text
        assert model.skipped == ()
        assert 1 in {e.component for e in model.path}

    def test_all_constant_is_error(self):
        d = Dataset(predictors=np.ones((4, 2)), names=("a", "b"),
                    response=ResponseVector.continuous([1.0, 2.0, 3.0, 4.0]))
        with pytest.raises(NumericError, match="non-fittable"):
            gradboost.fit(d, L2Loss(), m_stop=5)

    def test_bad_setup(self, gaussian_data):
        with pytest.raises(DataError, match="Step length"):
            gradboost.fit(gaussian_data, L2Loss(), sl=0.0)
        with pytest.raises(DataError, match="nonnegative"):
            gradboost.fit(gaussian_data, L2Loss(), m_stop=-1)
        with pytest.raises(DataError, match="binary response"):
            gradboost.fit(gaussian_data, LogisticLoss())

    def test_standardized_fit_reports_original_scale(self, gaussian_data):
        X = gaussian_data.predictors * np.array([10.0, 0.1, 1.0, 5.0, 2.0]) + 3.0
        d = gaussian_data.with_predictors(X)
        model = gradboost.fit(d, L2Loss(), m_stop=60, standardize=True)
        intercept, coefficients = gradboost.aggregate_coefficients(model)
        np.testing.assert_allclose(intercept + X @ coefficients, gradboost.predict(model, X), atol=1e-10)

    def test_continue_matches_longer_fit(self, gaussian_data):
        short = gradboost.fit(gaussian_data, L2Loss(), m_stop=30)
        longer = gradboost.fit(gaussian_data, L2Loss(), m_stop=50)
        continued = gradboost.continue_fit(short, gaussian_data, 20)
        assert [e.component for e in continued.path] == [e.component for e in longer.path]
        np.testing.assert_allclose(continued.risk, longer.risk, rtol=1e-12)


class TestSelectComponent:

    def test_exact_fit_wins(self):
        u = np.array([1.0, -2.0, 3.0])
        assert gradboost.select_component(u, [u.copy(), np.zeros(3)]) == 0

    def test_tie_goes_to_lowest(self):
        fit = np.array([0.5, 0.5, 0.5])
        assert gradboost.select_component(np.ones(3), [fit, fit.copy()]) == 0

    def test_random_components(self, rng):
        u = rng.normal(size=20)
        fits = [rng.normal(size=20) for _ in range(5)]
        assert gradboost.select_component(u, fits) == int(np.argmin([np.sum((u - h) ** 2) for h in fits]))

    def test_none_marks_unfittable(self):
        assert gradboost.select_component(np.ones(2), [None, np.zeros(2)]) == 1
        with pytest.raises(NumericError):
            gradboost.select_component(np.ones(2), [None])


class TestPredictAndTruncate:

    def test_training_prediction_matches_risk(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=40)
        f = gradboost.predict(model, gaussian_data.predictors)
        assert L2Loss().empirical_risk(gaussian_data.y, f) == pytest.approx(model.risk[-1], rel=1e-12)

    def test_at_m_zero_is_offset(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=10)
        np.testing.assert_array_equal(gradboost.predict(model, gaussian_data.predictors, at_m=0), model.offset)

    def test_gamma_response_scale(self, rng):
        X = rng.uniform(size=(60, 2))
        y = rng.gamma(2.0, np.exp(1.0 + X[:, 0]) / 2.0)
        d = Dataset(predictors=X, names=("a", "b"), response=ResponseVector.continuous(y))
        model = gradboost.fit(d, GammaDevianceLoss(), m_stop=30)
        np.testing.assert_allclose(gradboost.predict(model, X, scale="response"),
                                   np.exp(gradboost.predict(model, X)))

    def test_logistic_response_scale_is_probability(self):
        d = make_binary()
        model = gradboost.fit(d, LogisticLoss(), m_stop=30)
        p = gradboost.predict(model, d.predictors, scale="response")
        assert np.all((p > 0) & (p < 1))

    def test_wrong_column_count(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=5)
        with pytest.raises(ModelError, match="5 columns"):
            gradboost.predict(model, np.ones((3, 2)))
        with pytest.raises(ModelError, match="outside"):
            gradboost.predict(model, gaussian_data.predictors, at_m=6)

    @pytest.mark.parametrize("m", [0, 7, 25])
    def test_truncation_is_exact(self, gaussian_data, m):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=25)
        truncated = gradboost.truncate(model, m)
        np.testing.assert_array_equal(gradboost.predict(truncated, gaussian_data.predictors),
                                      gradboost.predict(model, gaussian_data.predictors, at_m=m))
        refit = gradboost.fit(gaussian_data, L2Loss(), m_stop=m)
        assert [e.component for e in refit.path] == [e.component for e in truncated.path]
        np.testing.assert_array_equal(refit.risk, truncated.risk)

    def test_truncate_out_of_range(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=5)
        with pytest.raises(ModelError):
            gradboost.truncate(model, 6)

    def test_extrapolation_flags_per_row(self):
        d = _single_predictor()
        model = gradboost.fit(d, L2Loss(), [LearnerSpec(kind="pspline")], m_stop=20)
        flags = gradboost.extrapolation_flags(model, np.array([[0.0], [100.0], [-100.0]]))
        assert flags == ["", "x", "x"]
        assert gradboost.extrapolated_components(model, np.array([[0.0]])) == []

    def test_linear_components_never_flagged(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=10)
        assert not gradboost.has_splines(model)
        assert gradboost.extrapolation_flags(model, 100.0 * gaussian_data.predictors[:2]) == ["", ""]


class TestCoefficients:

    def test_spline_model_refuses(self):
        d = _single_predictor()
        model = gradboost.fit(d, L2Loss(), [LearnerSpec(kind="pspline")], m_stop=10)
        with pytest.raises(ModelError, match="partial_effect"):
            gradboost.aggregate_coefficients(model)

    def test_coefficient_path_rows(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=12)
        path = gradboost.coefficient_path(model)
        assert list(path.columns) == ["m", "(Intercept)", *gaussian_data.names]
        assert len(path) == 13
        intercept, coefficients = gradboost.aggregate_coefficients(model, 7)
        np.testing.assert_allclose(path.iloc[7, 1:].to_numpy(dtype=float), np.r_[intercept, coefficients])

    def test_selection_frequencies(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=20)
        frequencies = gradboost.selection_frequencies(model)
        assert sum(frequencies.values()) == pytest.approx(1.0)
        assert gradboost.selection_frequencies(model, 0) == {}


class TestPartialEffect:

    def test_unselected_component_is_zero(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=1)
        unused = next(j for j in range(gaussian_data.p) if j != model.path[0].component)
        effect = gradboost.partial_effect(model, unused, np.linspace(-1, 1, 5))
        assert not effect.selected
        np.testing.assert_array_equal(effect.effect, 0.0)

    def test_linear_effect_is_centered_line(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=50)
        j = model.path[0].component
        grid = np.linspace(-2, 2, 9)
        effect = gradboost.partial_effect(model, j, grid)
        _, coefficients = gradboost.aggregate_coefficients(model)
        np.testing.assert_allclose(np.diff(effect.effect) / np.diff(grid), coefficients[j])
        centered = gradboost.partial_effect(model, j, gaussian_data.column(j)).effect
        assert np.mean(centered) == pytest.approx(0.0, abs=1e-12)

    def test_empty_grid(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=3)
        with pytest.raises(DataError, match="empty"):
            gradboost.partial_effect(model, 0, [])


class TestRiskPath:

    def test_l2_training_path(self, gaussian_data):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=60)
        path = gradboost.risk_path(model, gaussian_data)
        assert path[0] == pytest.approx(0.5 * np.var(gaussian_data.y))
        assert np.all(np.diff(path) <= 1e-15)
        np.testing.assert_allclose(path, model.risk, rtol=1e-12)

    def test_matches_truncated_risk(self, gaussian_data):
        model = gradboost.fit(gaussian_data, LaplaceLoss(), m_stop=15)
        path = gradboost.risk_path(model, gaussian_data)
        for m in (0, 5, 15):
            f = gradboost.predict(gradboost.truncate(model, m), gaussian_data.predictors)
            assert path[m] == pytest.approx(LaplaceLoss().empirical_risk(gaussian_data.y, f), rel=1e-12)
