"""Likelihood-based boosting: GLM and Cox engines, bands and summaries."""
import logging

import numpy as np
import pytest

from boostkit.models.dataset import Dataset, ResponseVector
from boostkit.models.errors import DataError, ModelError, NumericError
from boostkit.services import gradboost, likboost
from boostkit.services.baselearners import LearnerSpec, PSplineLearner
from boostkit.services.likboost import PenaltySpec
from boostkit.services.losses import L2Loss
from boostkit.utils.simulate import simulate_appendix, simulate_survival
from tests.conftest import make_binary, make_gaussian


def _survival(time, status, X=None):
    time = np.asarray(time, dtype=float)
    if X is None:
        X = np.arange(time.size, dtype=float)[:, None]
    names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    return Dataset(predictors=X, names=names, response=ResponseVector.survival(time, status))


def _naive_score_information(time, status, X, eta):
    """Breslow score and information per column, one risk set at a time."""
    w = np.exp(eta)
    score = np.zeros(X.shape[1])
    information = np.zeros(X.shape[1])
    for i in np.flatnonzero(status == 1):
        at_risk = time >= time[i]
        total = w[at_risk].sum()
        mean = (w[at_risk, None] * X[at_risk]).sum(axis=0) / total
        second = (w[at_risk, None] * X[at_risk] ** 2).sum(axis=0) / total
        score += X[i] - mean
        information += second - mean ** 2
    return score, information


class TestPenalty:

    def test_cox_rule(self):
        status = np.r_[np.ones(126), np.zeros(30)]
        d = _survival(np.arange(1.0, 157.0), status)
        assert likboost.penalty_from_stepsize(0.1, d) == 1134.0

    def test_glm_rule(self):
        assert likboost.penalty_from_stepsize(0.1, make_gaussian(n=50)) == pytest.approx(450.0)

    def test_step_size_near_one(self):
        assert likboost.penalty_from_stepsize(1 - 1e-9, make_gaussian(n=50)) < 1e-6

    def test_spec_validation(self):
        with pytest.raises(DataError, match="exactly one"):
            PenaltySpec()
        with pytest.raises(DataError, match="exactly one"):
            PenaltySpec(lam=1.0, nu=0.1)
        with pytest.raises(DataError, match="\\(0, 1\\)"):
            PenaltySpec(nu=1.0)

    def test_no_events(self):
        d = _survival([1.0, 2.0], [0, 0])
        with pytest.raises(DataError, match="without events"):
            likboost.penalty_from_stepsize(0.1, d)


class TestGaussianCoincidence:

    def test_matches_l2_gradient_boosting(self):
        """With every column scaled to x'x = n, lambda = n (1/sl - 1) reproduces L2 boosting."""
        d = make_gaussian(n=50, p=5, seed=21)
        X = d.predictors - d.predictors.mean(axis=0)
        X = X / np.sqrt(np.mean(X ** 2, axis=0))
        d = d.with_predictors(X)
        boosted = gradboost.fit(d, L2Loss(), m_stop=100, sl=0.1)
        likelihood = likboost.fit_glm(d, likboost.glm_family("gaussian"), PenaltySpec(nu=0.1), m_stop=100)
        assert likelihood.lam == pytest.approx(50 * 9.0)
        assert [s.component for s in likelihood.path] == [e.component for e in boosted.path]
        for m in range(101):
            intercept_g, coefficients_g = gradboost.aggregate_coefficients(boosted, m)
            intercept_l, coefficients_l = likboost.coefficients_lik(likelihood, m)
            np.testing.assert_allclose(coefficients_l, coefficients_g, atol=1e-8)
            assert intercept_l == pytest.approx(intercept_g, abs=1e-8)

    def test_standardize_flag_matches_gradient_boosting(self):
        """`standardize=True` gives every column x'x = n, so both engines agree on raw columns."""
        d = make_gaussian(n=50, p=5, seed=21)
        d = d.with_predictors(d.predictors * np.array([1.0, 5.0, 0.2, 3.0, 10.0]) + 7.0)
        boosted = gradboost.fit(d, L2Loss(), m_stop=80, sl=0.1, standardize=True)
        likelihood = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=80, standardize=True)
        assert [s.component for s in likelihood.path] == [e.component for e in boosted.path]
        intercept_g, coefficients_g = gradboost.aggregate_coefficients(boosted)
        intercept_l, coefficients_l = likboost.coefficients_lik(likelihood)
        np.testing.assert_allclose(coefficients_l, coefficients_g, atol=1e-8)
        assert intercept_l == pytest.approx(intercept_g, abs=1e-8)

    def test_spline_component_matches_gradient_boosting(self):
        d, _ = simulate_appendix(n=120, seed=3)
        spec = [LearnerSpec(kind="pspline")]
        boosted = gradboost.fit(d, L2Loss(), spec, m_stop=60, sl=0.1)
        likelihood = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=60, learners=spec)
        grid = np.linspace(-0.25, 0.25, 11)[:, None]
        for m in (0, 1, 10, 60):
            np.testing.assert_allclose(likboost.predict_lik(likelihood, grid, at_m=m),
                                       gradboost.predict(boosted, grid, at_m=m), atol=1e-8)


class TestFitGlm:

    def test_unpenalized_single_step_is_ols_slope(self):
        d = make_gaussian(n=40, p=1, beta=(1.3,), seed=5)
        model = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(lam=0.0), m_stop=1)
        x = d.column(0) - d.column(0).mean()
        assert model.path[0].gamma == pytest.approx(x @ (d.y - d.y.mean()) / (x @ x), rel=1e-12)

    def test_intercept_only_start(self):
        d = make_binary(n=40)
        model = likboost.fit_glm(d, likboost.glm_family("binomial"), PenaltySpec(nu=0.1), m_stop=0)
        share = np.mean(d.y > 0)
        assert model.block_path[0][0] == pytest.approx(np.log(share / (1 - share)), abs=1e-10)
        np.testing.assert_allclose(likboost.predict_lik(model, d.predictors, scale="response"), share)

    def test_logistic_first_selection_is_deviance_argmin(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(20, 3))
        y = np.where(X[:, 1] + 0.3 * rng.normal(size=20) > 0, 1.0, -1.0)
        d = Dataset(predictors=X, names=("a", "b", "c"), response=ResponseVector.binary(y))
        model = likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=3)
        assert model.path[0].component == 1
        target = (y + 1) / 2
        eta0 = np.log(target.mean() / (1 - target.mean()))
        mu0 = target.mean()
        deviances = []
        for j in range(3):
            x = X[:, j] - X[:, j].mean()
            gamma = x @ (target - mu0) / (mu0 * (1 - mu0) * x @ x + model.lam)
            mu = 1 / (1 + np.exp(-(eta0 + gamma * x)))
            deviances.append(-2 * np.sum(target * np.log(mu) + (1 - target) * np.log(1 - mu)))
        assert model.path[0].component == int(np.argmin(deviances))

    def test_deviance_decreases(self):
        d = make_binary(n=80)
        model = likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=40)
        assert model.criterion[-1] < model.criterion[0]

    def test_poisson(self, rng):
        X = rng.normal(size=(60, 3))
        y = rng.poisson(np.exp(0.5 + 0.7 * X[:, 0])).astype(float)
        d = Dataset(predictors=X, names=("a", "b", "c"), response=ResponseVector.continuous(y))
        model = likboost.fit_glm(d, likboost.glm_family("poisson"), PenaltySpec(nu=0.1), m_stop=50)
        assert model.path[0].component == 0
        assert np.all(likboost.predict_lik(model, X, scale="response") > 0)

    def test_single_class_diverges(self):
        d = Dataset(predictors=np.arange(4.0)[:, None], names=("x",),
                    response=ResponseVector.binary(np.ones(4)))
        with pytest.raises(NumericError, match="single class"):
            likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=5)

    def test_family_response_mismatch(self, gaussian_data):
        with pytest.raises(DataError, match="binary response"):
            likboost.fit_glm(gaussian_data, likboost.Binomial(), PenaltySpec(nu=0.1))
        with pytest.raises(DataError, match="Unknown GLM family"):
            likboost.glm_family("gamma")

    def test_positive_penalty_needed_when_p_exceeds_n(self, rng):
        d = Dataset(predictors=rng.normal(size=(5, 8)), names=tuple("abcdefgh"),
                    response=ResponseVector.continuous(rng.normal(size=5)))
        with pytest.raises(DataError, match="positive penalty"):
            likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(lam=0.0), m_stop=3)

    def test_unpenalized_block_starts_at_ols(self, gaussian_data):
        d = Dataset(predictors=gaussian_data.predictors, names=gaussian_data.names,
                    response=gaussian_data.response, unpenalized=frozenset({1}))
        model = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=10)
        U = np.column_stack([np.ones(d.n), d.column(1)])
        np.testing.assert_allclose(model.block_path[0], np.linalg.lstsq(U, d.y, rcond=None)[0], atol=1e-10)
        assert all(step.component != 1 for step in model.path)
        assert model.block_names == ["(Intercept)", "x2"]

    def test_standardized_coefficients_match_predictions(self, gaussian_data):
        X = gaussian_data.predictors * 4.0 - 2.0
        d = gaussian_data.with_predictors(X)
        model = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=30, standardize=True)
        intercept, coefficients = likboost.coefficients_lik(model)
        np.testing.assert_allclose(intercept + X @ coefficients, likboost.predict_lik(model, X), atol=1e-10)

    def test_training_prediction_matches_criterion(self, gaussian_data):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=25)
        eta = likboost.predict_lik(model, gaussian_data.predictors)
        assert np.sum((gaussian_data.y - eta) ** 2) == pytest.approx(model.criterion[-1], rel=1e-12)
        assert likboost.lik_risk(model, gaussian_data) == pytest.approx(model.criterion[-1] / (2 * 50))

    def test_truncation(self, gaussian_data):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=25)
        truncated = likboost.truncate_lik(model, 10)
        np.testing.assert_array_equal(likboost.predict_lik(truncated, gaussian_data.predictors),
                                      likboost.predict_lik(model, gaussian_data.predictors, at_m=10))
        assert truncated.param_cov is None
        assert likboost.truncate_lik(model, 25) is model


class TestConfidenceBands:

    def test_intercept_only_band(self, gaussian_data):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=0)
        band = likboost.confidence_bands(model, 0, np.linspace(-1, 1, 4)).to_frame()
        y = gaussian_data.y
        np.testing.assert_allclose(band["estimate"], y.mean())
        np.testing.assert_allclose(band["upper"] - band["estimate"],
                                   likboost.Z_95 * np.std(y, ddof=1) / np.sqrt(y.size), rtol=1e-10)

    def test_bands_contain_estimate(self, gaussian_data):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=60)
        for j in {s.component for s in model.path}:
            band = likboost.confidence_bands(model, j, np.linspace(-3, 3, 25)).to_frame()
            assert np.all(band["lower"] <= band["estimate"] + 1e-15)
            assert np.all(band["estimate"] <= band["upper"] + 1e-15)

    def test_close_to_ols_standard_errors(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=80)
        y = 1.0 + 0.8 * x + 0.5 * rng.normal(size=80)
        d = Dataset(predictors=x[:, None], names=("x",), response=ResponseVector.continuous(y))
        model = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(lam=1.0), m_stop=300)
        grid = np.array([-2.0, -1.0, 1.5, 2.5])
        band = likboost.confidence_bands(model, 0, grid).to_frame()
        xc = x - x.mean()
        slope = xc @ y / (xc @ xc)
        residual = y - y.mean() - slope * xc
        se = np.sqrt(residual @ residual / (80 - 2) / (xc @ xc))
        classical = likboost.Z_95 * np.abs(grid - x.mean()) * se
        np.testing.assert_allclose(band["upper"] - band["estimate"], classical, rtol=0.15)

    def test_unselected_component_flagged(self, gaussian_data, caplog):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=1)
        unused = next(j for j in range(gaussian_data.p) if j != model.path[0].component)
        with caplog.at_level(logging.WARNING):
            band = likboost.confidence_bands(model, unused, np.linspace(0, 1, 3))
        assert not band.selected
        np.testing.assert_array_equal(band.table[["estimate", "lower", "upper"]].to_numpy(), 0.0)
        assert "never selected" in caplog.text

    def test_requires_hat_information(self, gaussian_data):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=5,
                                 track_hat=False)
        with pytest.raises(ModelError, match="hat-matrix"):
            likboost.confidence_bands(model, 0, [0.0])


class TestSummary:

    def test_gaussian_table(self, gaussian_data):
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=30)
        summary = likboost.summary_lik(model, gaussian_data.n)
        table = summary["table"]
        assert list(table.columns) == ["m", "nonzero", "deviance", "df", "bic", "aicc"]
        assert table["df"].iloc[0] == pytest.approx(1.0)
        assert table["df"].iloc[-1] > 1.0
        assert 0 <= summary["aicc_m"] <= 30 and 0 <= summary["bic_m"] <= 30


class TestSplineComponents:

    @pytest.fixture
    def additive_binary(self):
        rng = np.random.default_rng(31)
        x1 = rng.uniform(-2.0, 2.0, size=200)
        x2 = rng.normal(size=200)
        eta = 2.0 * np.sin(1.5 * x1)
        y = np.where(rng.uniform(size=200) < 1 / (1 + np.exp(-eta)), 1.0, -1.0)
        return Dataset(predictors=np.column_stack([x1, x2]), names=("x1", "x2"),
                       response=ResponseVector.binary(y))

    def test_spline_beats_linear_on_curved_effect(self, additive_binary):
        d = additive_binary
        splines = likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=60,
                                   learners=[LearnerSpec(kind="pspline")] * 2)
        linear = likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=60)
        assert isinstance(splines.spline(0), PSplineLearner)
        assert splines.path[0].component == 0
        assert splines.path[0].params is not None
        assert splines.criterion[-1] < linear.criterion[-1]
        assert splines.criterion[-1] < splines.criterion[0]

    def test_first_step_is_penalized_scoring_update(self, additive_binary):
        d = additive_binary
        model = likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=1,
                                 learners=[LearnerSpec(kind="pspline"), LearnerSpec()])
        assert model.path[0].component == 0
        spline = model.spline(0)
        B = spline.design(d.column(0))
        target = (d.y + 1) / 2
        mu = target.mean()
        ratio = model.lam / d.n
        K = ratio * B.T @ B + (1 + ratio) * spline.lam * spline.penalty()
        expected = np.linalg.solve(mu * (1 - mu) * B.T @ B + K, B.T @ (target - mu))
        np.testing.assert_allclose(model.path[0].params, expected, rtol=1e-8, atol=1e-12)

    def test_coefficients_refused(self, additive_binary):
        model = likboost.fit_glm(additive_binary, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=5,
                                 learners=[LearnerSpec(kind="pspline")] * 2)
        with pytest.raises(ModelError, match="spline components"):
            likboost.coefficients_lik(model)

    def test_bands_are_centered_and_contain_estimate(self, additive_binary):
        d = additive_binary
        model = likboost.fit_glm(d, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=40,
                                 learners=[LearnerSpec(kind="pspline")] * 2)
        band = likboost.confidence_bands(model, 0, d.column(0)).to_frame()
        assert band["estimate"].mean() == pytest.approx(0.0, abs=1e-10)
        assert np.all(band["upper"] - band["lower"] > 0)
        assert np.all(band["lower"] <= band["estimate"])
        assert np.all(band["estimate"] <= band["upper"])
        grid = np.linspace(-1.5, 1.5, 7)
        estimate = likboost.confidence_bands(model, 0, grid).to_frame()["estimate"]
        assert np.corrcoef(estimate, np.sin(1.5 * grid))[0, 1] > 0.9

    def test_summary_counts_spline_components(self, additive_binary):
        model = likboost.fit_glm(additive_binary, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=30,
                                 learners=[LearnerSpec(kind="pspline")] * 2)
        summary = likboost.summary_lik(model, additive_binary.n)
        assert summary["nonzero"] == len({s.component for s in model.path})
        assert summary["table"]["nonzero"].iloc[0] == 0

    def test_binary_covariate_stays_linear(self, rng, caplog):
        x = rng.normal(size=80)
        group = (rng.uniform(size=80) > 0.5).astype(float)
        y = x + 2.0 * group + 0.3 * rng.normal(size=80)
        d = Dataset(predictors=np.column_stack([x, group]), names=("x", "group"),
                    response=ResponseVector.continuous(y))
        with caplog.at_level(logging.WARNING):
            model = likboost.fit_glm(d, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=40,
                                     learners=[LearnerSpec(kind="pspline")] * 2)
        assert isinstance(model.spline(0), PSplineLearner)
        assert model.spline(1) is None
        assert "linear learner" in caplog.text
        group_steps = [s for s in model.path if s.component == 1]
        assert group_steps and all(s.params is None for s in group_steps)

    def test_extrapolation_flags(self, additive_binary, caplog):
        model = likboost.fit_glm(additive_binary, likboost.Binomial(), PenaltySpec(nu=0.1), m_stop=10,
                                 learners=[LearnerSpec(kind="pspline"), LearnerSpec()])
        newX = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 50.0]])
        assert likboost.extrapolation_flags(model, newX) == ["", "x1", ""]
        with caplog.at_level(logging.WARNING):
            likboost.predict_lik(model, newX)
        assert "extrapolated linearly: x1" in caplog.text

    def test_wrong_number_of_specs(self, gaussian_data):
        with pytest.raises(DataError, match="learner specs"):
            likboost.fit_glm(gaussian_data, likboost.Gaussian(), PenaltySpec(nu=0.1), m_stop=3,
                             learners=[LearnerSpec(kind="pspline")])


class TestCox:

    def test_two_subject_partial_likelihood(self):
        assert likboost.cox_partial_loglik([1.0, 2.0], [1, 1], [0.0, 0.0]) == pytest.approx(-np.log(2.0))

    def test_shift_invariance(self, rng):
        time = rng.exponential(size=30)
        status = rng.integers(0, 2, size=30)
        status[0] = 1
        eta = rng.normal(size=30)
        assert likboost.cox_partial_loglik(time, status, eta + 3.7) == pytest.approx(
            likboost.cox_partial_loglik(time, status, eta), rel=1e-12)

    def test_ties_use_breslow_risk_sets(self):
        # both tied events see the full risk set {1, 2, 3}
        value = likboost.cox_partial_loglik([1.0, 1.0, 2.0], [1, 1, 0], [0.0, 0.0, np.log(2.0)])
        assert value == pytest.approx(-2 * np.log(4.0))

    def test_first_step_matches_naive_score_statistic(self):
        d, _ = simulate_survival(n=40, p=8, seed=3)
        model = likboost.fit_cox(d, PenaltySpec(nu=0.1), m_stop=1)
        score, information = _naive_score_information(d.response.time, d.response.status,
                                                       d.predictors, np.zeros(d.n))
        statistic = score ** 2 / (information + model.lam)
        j = int(np.argmax(statistic))
        assert model.path[0].component == j
        assert model.path[0].gamma == pytest.approx(score[j] / (information[j] + model.lam), rel=1e-10)

    def test_mandatory_covariates_at_zero_steps(self):
        d, _ = simulate_survival(n=80, p=4, effects=(0.8, -0.5), seed=9)
        model = likboost.fit_cox(d, PenaltySpec(nu=0.1), m_stop=0, unpenalized=[0, 1])
        beta = model.block_path[0]

        def loglik(b):
            return likboost.cox_partial_loglik(d.response.time, d.response.status, d.predictors[:, :2] @ b)

        h = 1e-5
        gradient = [(loglik(beta + h * e) - loglik(beta - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(gradient, 0.0, atol=1e-6)

    def test_recovers_true_components(self):
        d, _ = simulate_survival(n=60, p=100, seed=20130101)
        model = likboost.fit_cox(d, PenaltySpec(nu=0.1), m_stop=50)
        assert {0, 1, 2} <= {s.component for s in model.path}
        assert model.criterion[-1] > model.criterion[0]
        steps_up = np.diff(model.criterion) >= -1e-10
        assert steps_up.mean() >= 0.99

    def test_rescaling_invariance_without_penalty(self):
        d, _ = simulate_survival(n=60, p=5, seed=2)
        first = likboost.fit_cox(d, PenaltySpec(lam=0.0), m_stop=10)
        scaled = d.with_predictors(d.predictors * np.array([1.0, 10.0, 0.2, 1.0, 3.0]))
        second = likboost.fit_cox(scaled, PenaltySpec(lam=0.0), m_stop=10)
        assert [s.component for s in first.path] == [s.component for s in second.path]

    def test_relative_risk_scale(self):
        d, _ = simulate_survival(n=50, p=6, seed=4)
        model = likboost.fit_cox(d, PenaltySpec(nu=0.1), m_stop=20)
        eta = likboost.predict_lik(model, d.predictors)
        np.testing.assert_allclose(likboost.predict_lik(model, d.predictors, scale="response"), np.exp(eta))
        assert likboost.cox_partial_loglik(d.response.time, d.response.status, eta) == pytest.approx(
            model.criterion[-1], rel=1e-10)

    def test_requires_survival_response(self, gaussian_data):
        with pytest.raises(DataError, match="survival response"):
            likboost.fit_cox(gaussian_data, PenaltySpec(nu=0.1))

    def test_bands_not_available(self):
        d, _ = simulate_survival(n=30, p=4, seed=6)
        model = likboost.fit_cox(d, PenaltySpec(nu=0.1), m_stop=5)
        with pytest.raises(ModelError, match="GLM engine only"):
            likboost.confidence_bands(model, 0, [0.0])

    def test_summary_line_counts(self):
        d, _ = simulate_survival(n=50, p=6, seed=4)
        model = likboost.fit_cox(d, PenaltySpec(nu=0.1), m_stop=15, unpenalized=[5])
        summary = likboost.summary_lik(model, d.n)
        assert summary["mandatory"] == 1
        assert summary["nonzero"] == len({s.component for s in model.path}) + 1
        assert list(summary["table"].columns) == ["m", "nonzero", "partial_loglik"]
