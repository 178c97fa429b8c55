"""Estimator wrapper tests: sklearn protocol plus both task modes."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lhgnn.errors import DimensionError
from lhgnn.estimator import LHGNNClassifier


def small(**overrides):
    base = dict(epochs=3, batch_size=4, seed=0)
    base.update(overrides)
    return LHGNNClassifier(**base)


@pytest.fixture(scope="module")
def tagging_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 64, 16)).astype(np.float32)
    y = (rng.random((12, 3)) < 0.4).astype(np.float64)
    y[:, 0] = np.maximum(y[:, 0], (np.arange(12) % 2 == 0))  # class 0 has positives
    return X, y


@pytest.fixture(scope="module")
def labeled_data():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(12, 64, 16)).astype(np.float32)
    y = np.array([10, 20, 30] * 4)  # non-contiguous label ids
    return X, y


class TestSklearnProtocol:
    def test_get_set_params_and_clone(self):
        est = small(lr=5e-4, clusters=6)
        assert est.get_params()["lr"] == 5e-4
        est.set_params(epochs=7)
        assert est.epochs == 7
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            small().predict(np.zeros((1, 64, 16), np.float32))

    def test_bad_input_shapes(self, tagging_data):
        X, y = tagging_data
        with pytest.raises(DimensionError):
            small().fit(X[..., None], y)
        with pytest.raises(DimensionError):
            small().fit(X, y[:6])
        with pytest.raises(DimensionError):
            small().fit(X, y[None])


class TestMultilabel:
    def test_fit_predict_shapes(self, tagging_data):
        X, y = tagging_data
        est = small().fit(X, y)
        assert est.task_ == "multilabel"
        np.testing.assert_array_equal(est.classes_, [0, 1, 2])
        proba = est.predict_proba(X)
        assert proba.shape == (12, 3)
        assert np.all((proba > 0) & (proba < 1))
        pred = est.predict(X)
        assert pred.shape == (12, 3)
        assert set(np.unique(pred)) <= {0, 1}
        np.testing.assert_array_equal(pred, (proba >= 0.5).astype(np.int64))

    def test_score_is_map(self, tagging_data):
        X, y = tagging_data
        est = small().fit(X, y)
        from lhgnn.metrics import mean_average_precision

        assert est.score(X, y) == pytest.approx(mean_average_precision(est.decision_function(X), y))

    def test_history_recorded(self, tagging_data):
        X, y = tagging_data
        est = small().fit(X, y)
        assert len(est.history_) == est.epochs

    def test_seed_reproducibility(self, tagging_data):
        X, y = tagging_data
        a = small().fit(X, y).decision_function(X)
        b = small().fit(X, y).decision_function(X)
        assert a.tobytes() == b.tobytes()


class TestMulticlass:
    def test_fit_predict_maps_back_to_original_labels(self, labeled_data):
        X, y = labeled_data
        est = small().fit(X, y)
        assert est.task_ == "multiclass"
        np.testing.assert_array_equal(est.classes_, [10, 20, 30])
        pred = est.predict(X)
        assert set(np.unique(pred)) <= {10, 20, 30}
        proba = est.predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(pred, est.classes_[proba.argmax(axis=1)])

    def test_score_is_accuracy(self, labeled_data):
        X, y = labeled_data
        est = small(epochs=15).fit(X, y)
        score = est.score(X, y)
        assert 0.0 <= score <= 1.0
        assert score == pytest.approx(float((est.predict(X) == y).mean()))
