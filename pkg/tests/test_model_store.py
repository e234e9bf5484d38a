"""Saving and loading fitted models."""
import json

import numpy as np
import pytest

from boostkit.models.errors import DataError, ModelError
from boostkit.services import adaboost, gradboost, likboost
from boostkit.services.baselearners import parse_learners
from boostkit.services.losses import HuberLoss, L2Loss
from boostkit.services.model_store import ModelStore
from boostkit.utils.simulate import simulate_survival


@pytest.fixture
def store():
    return ModelStore()


class TestRoundTrip:

    def test_gradient_with_splines(self, store, gaussian_data, tmp_path):
        learners = parse_learners("linear", gaussian_data.names, ["x2:pspline"])
        model = gradboost.fit(gaussian_data, L2Loss(), learners, m_stop=40, standardize=True)
        loaded = store.load(store.save(model, tmp_path / "model.json"))
        X = gaussian_data.predictors * 1.3
        for m in (0, 17, 40):
            np.testing.assert_array_equal(gradboost.predict(loaded, X, at_m=m),
                                          gradboost.predict(model, X, at_m=m))
        assert loaded.family.describe() == model.family.describe()

    def test_gradient_huber_keeps_delta(self, store, gaussian_data, tmp_path):
        model = gradboost.fit(gaussian_data, HuberLoss(delta=0.3), m_stop=10)
        loaded = store.load(store.save(model, tmp_path / "model.json"))
        assert loaded.family.delta == 0.3

    def test_glm(self, store, binary_data, tmp_path):
        model = likboost.fit_glm(binary_data, likboost.glm_family("binomial"),
                                 likboost.PenaltySpec(nu=0.1), m_stop=25)
        loaded = store.load(store.save(model, tmp_path / "model.json"))
        for scale in ("link", "response"):
            np.testing.assert_array_equal(likboost.predict_lik(loaded, binary_data.predictors, scale=scale),
                                          likboost.predict_lik(model, binary_data.predictors, scale=scale))
        band = likboost.confidence_bands(loaded, 0, np.linspace(-1, 1, 5))
        np.testing.assert_array_equal(band.table.to_numpy(),
                                      likboost.confidence_bands(model, 0, np.linspace(-1, 1, 5)).table.to_numpy())

    def test_glm_with_splines(self, store, gaussian_data, tmp_path):
        specs = parse_learners("linear", gaussian_data.names, ["x1:pspline"])
        model = likboost.fit_glm(gaussian_data, likboost.Gaussian(), likboost.PenaltySpec(nu=0.1),
                                 m_stop=20, learners=specs)
        loaded = store.load(store.save(model, tmp_path / "model.json"))
        assert loaded.has_splines
        X = gaussian_data.predictors * 1.2
        for m in (0, 7, 20):
            np.testing.assert_allclose(likboost.predict_lik(loaded, X, at_m=m),
                                       likboost.predict_lik(model, X, at_m=m))
        z = np.linspace(-1, 1, 5)
        np.testing.assert_allclose(likboost.confidence_bands(loaded, 0, z).table.to_numpy(),
                                   likboost.confidence_bands(model, 0, z).table.to_numpy())

    def test_cox_without_mandatory_block(self, store, tmp_path):
        d, _ = simulate_survival(n=40, p=10, seed=4)
        model = likboost.fit_cox(d, likboost.PenaltySpec(nu=0.1), m_stop=15)
        loaded = store.load(store.save(model, tmp_path / "model.json"))
        assert loaded.engine == "cox"
        np.testing.assert_array_equal(likboost.predict_lik(loaded, d.predictors),
                                      likboost.predict_lik(model, d.predictors))

    def test_adaboost(self, store, binary_data, tmp_path):
        model = adaboost.fit_adaboost(binary_data, m_stop=12)
        loaded = store.load(store.save(model, tmp_path / "model.json"))
        assert loaded.rounds == model.rounds
        labels, margin = adaboost.predict_adaboost(loaded, binary_data.predictors)
        expected_labels, expected_margin = adaboost.predict_adaboost(model, binary_data.predictors)
        np.testing.assert_array_equal(margin, expected_margin)
        np.testing.assert_array_equal(labels, expected_labels)

    def test_provenance_recorded(self, store, gaussian_data, tmp_path):
        model = gradboost.fit(gaussian_data, L2Loss(), m_stop=3)
        path = store.save(model, tmp_path / "model.json", created_with={"invocation": "fit --mstop 3"})
        document = json.loads(path.read_text())
        assert document["engine"] == "gradient"
        assert document["created_with"]["invocation"] == "fit --mstop 3"


class TestLoadErrors:

    def test_missing_file(self, store, tmp_path):
        with pytest.raises(DataError, match="Model file not found"):
            store.load(tmp_path / "absent.json")

    def test_not_json(self, store, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{ not json")
        with pytest.raises(ModelError, match="Invalid model file"):
            store.load(path)

    def test_wrong_version(self, store, gaussian_data, tmp_path):
        path = store.save(gradboost.fit(gaussian_data, L2Loss(), m_stop=3), tmp_path / "model.json")
        document = json.loads(path.read_text())
        document["format_version"] = 999
        path.write_text(json.dumps(document))
        with pytest.raises(ModelError, match="Unsupported model format version"):
            store.load(path)

    def test_unknown_component(self, store, binary_data, tmp_path):
        path = store.save(adaboost.fit_adaboost(binary_data, m_stop=2), tmp_path / "model.json")
        document = json.loads(path.read_text())
        document["payload"]["rounds"][0]["component"] = "nope"
        path.write_text(json.dumps(document))
        with pytest.raises(ModelError, match="unknown component"):
            store.load(path)
