"""Estimator API: sklearn conventions, fit/predict, validation."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from voltra.dynamics import PAPER_COEFFS, initial_state, integrate, make_windows
from voltra.estimators import (
    StandardTransformer,
    VolumePreservingFeedforward,
    VolumePreservingTransformer,
)

FAST = dict(n_epochs=50, batch_size=32, seed=1)


def state_pairs(n_points=41):
    traj = integrate(PAPER_COEFFS, initial_state("x", 1.1), 0.2, n_points - 1)
    batch = make_windows([traj], mode="feedforward")
    return batch.inputs, batch.outputs


def window_pairs(n_points=41):
    traj = integrate(PAPER_COEFFS, initial_state("x", 1.1), 0.2, n_points - 1)
    batch = make_windows([traj], seq_len=3, shift=3)
    return batch.inputs, batch.outputs


class TestSklearnConventions:
    def test_get_params_roundtrip(self):
        est = VolumePreservingTransformer(n_blocks=4, seed=7)
        params = est.get_params()
        assert params["n_blocks"] == 4 and params["seed"] == 7
        est.set_params(n_blocks=2)
        assert est.n_blocks == 2

    def test_clone(self):
        est = StandardTransformer(n_units=2, n_epochs=10)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            VolumePreservingFeedforward().predict(np.zeros((2, 3)))

    def test_fit_returns_self(self):
        X, y = state_pairs()
        est = VolumePreservingFeedforward(**FAST)
        assert est.fit(X, y) is est


class TestFitPredict:
    def test_vpff_shapes_and_counts(self):
        X, y = state_pairs()
        est = VolumePreservingFeedforward(**FAST).fit(X, y)
        assert est.n_parameters_ == 135
        assert est.n_features_in_ == 3
        pred = est.predict(X[:5])
        assert pred.shape == (5, 3)
        assert len(est.history_.losses) == FAST["n_epochs"]

    def test_vpt_shapes_and_counts(self):
        X, y = window_pairs()
        est = VolumePreservingTransformer(**FAST).fit(X, y)
        assert est.n_parameters_ == 162
        pred = est.predict(X[:4])
        assert pred.shape == (4, 3, 3)

    def test_st_shapes_and_counts(self):
        X, y = window_pairs()
        est = StandardTransformer(**FAST).fit(X, y)
        assert est.n_parameters_ == 99

    def test_training_improves_score(self):
        X, y = state_pairs()
        est = VolumePreservingFeedforward(n_epochs=300, batch_size=32, seed=3).fit(X, y)
        untrained = VolumePreservingFeedforward(n_epochs=0, seed=3).fit(X, y)
        assert est.score(X, y) > untrained.score(X, y)

    def test_fit_deterministic(self):
        X, y = window_pairs()
        a = VolumePreservingTransformer(**FAST).fit(X, y)
        b = VolumePreservingTransformer(**FAST).fit(X, y)
        np.testing.assert_array_equal(a.params_.flatten(), b.params_.flatten())

    def test_rollout_from_estimator(self):
        X, y = window_pairs()
        est = VolumePreservingTransformer(**FAST).fit(X, y)
        result = est.rollout(initial_state("x", 1.1), n_steps=20)
        assert len(result) == 21


class TestValidation:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            VolumePreservingFeedforward(**FAST).fit(np.zeros((4, 3)), np.zeros((5, 3)))

    def test_wrong_ndim_rejected(self):
        with pytest.raises(ValueError):
            VolumePreservingTransformer(**FAST).fit(np.zeros((4, 3)), np.zeros((4, 3)))
        with pytest.raises(ValueError):
            VolumePreservingFeedforward(**FAST).fit(np.zeros((4, 3, 3)), np.zeros((4, 3, 3)))

    def test_non_finite_rejected(self):
        X, y = state_pairs()
        X = X.copy()
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            VolumePreservingFeedforward(**FAST).fit(X, y)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            VolumePreservingFeedforward(**FAST).fit(np.zeros((0, 3)), np.zeros((0, 3)))
