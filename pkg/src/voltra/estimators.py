"""Scikit-learn style estimators wrapping the functional training core.

Each network is a regressor with the usual fit/predict/get_params surface,
so the models drop into pipelines, cross-validation, and grid search. The
heavy lifting (tape autodiff, Adam, structured parameters) stays in the
functional modules; these classes only validate inputs and hold state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import PAPER_COEFFS, RigidBodyParams, WindowBatch
from .evaluation import RolloutResult, rollout
from .layers import ModelSpec, count_params, forward_numpy, init_params
from .precision import resolve_dtype
from .training import TrainConfig, train


def _check_array(name: str, arr, ndim: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or infinite entries")
    return arr


def _check_pair(X, y, ndim: int) -> tuple[np.ndarray, np.ndarray]:
    X = _check_array("X", X, ndim)
    y = _check_array("y", y, ndim)
    if X.shape != y.shape:
        raise ValueError(f"X and y must share a shape, got {X.shape} vs {y.shape}")
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    return X, y


class _NetworkRegressor(BaseEstimator):
    """Shared fit/predict machinery; subclasses fix the architecture kind."""

    _kind = ""

    def _spec(self, d: int, seq_len: int) -> ModelSpec:
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            eta1=self.eta1,
            eta2=self.eta2,
            rho1=self.rho1,
            rho2=self.rho2,
            delta=self.delta,
            n_epochs=self.n_epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            precision=self.precision,
        )

    def _fit_batch(self, batch: WindowBatch, d: int, seq_len: int):
        cfg = self._train_config()
        self.spec_ = self._spec(d, seq_len)
        self.params_ = init_params(self.spec_, seed=self.seed, precision=self.precision)
        self.history_ = train(self.spec_, self.params_, batch, cfg)
        self.n_parameters_ = self.params_.n_params
        assert self.n_parameters_ == count_params(self.spec_)
        self.n_features_in_ = d
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = np.asarray(X, dtype=resolve_dtype(self.precision))
        return forward_numpy(self.spec_, self.params_, X)

    def score(self, X, y):
        """Negative mean relative L2 error (higher is better)."""
        check_is_fitted(self, "params_")
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        num = np.sqrt(((y - pred) ** 2).reshape(y.shape[0], -1).sum(axis=1))
        den = np.sqrt((y**2).reshape(y.shape[0], -1).sum(axis=1))
        return -float((num / den).mean())

    def rollout(
        self,
        z0,
        n_steps: int = 500,
        coeffs: RigidBodyParams = PAPER_COEFFS,
        h: float = 0.2,
        seed_with="midpoint",
    ) -> RolloutResult:
        check_is_fitted(self, "params_")
        return rollout(self.spec_, self.params_, coeffs, z0, h=h, n_steps=n_steps, seed_with=seed_with)


class VolumePreservingFeedforward(_NetworkRegressor):
    """Residual network of strictly-triangular layers; every sublayer has a
    unit Jacobian determinant, so the learned one-step map preserves volume.

    fit expects single-step state pairs: X, y of shape (n_samples, d) with
    y[i] the state one time step after X[i].
    """

    _kind = "vpff"

    def __init__(
        self,
        n_blocks: int = 6,
        n_linear: int = 1,
        eta1: float = 1e-2,
        eta2: float = 1e-6,
        rho1: float = 0.9,
        rho2: float = 0.99,
        delta: float = 1e-8,
        n_epochs: int = 500_000,
        batch_size: int = 128,
        seed: int = 0,
        precision: str = "f32",
    ):
        self.n_blocks = n_blocks
        self.n_linear = n_linear
        self.eta1 = eta1
        self.eta2 = eta2
        self.rho1 = rho1
        self.rho2 = rho2
        self.delta = delta
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.seed = seed
        self.precision = precision

    def _spec(self, d: int, seq_len: int) -> ModelSpec:
        return ModelSpec(
            kind="vpff", d=d, n_blocks=self.n_blocks, n_linear=self.n_linear, n_units=1, seq_len=1
        )

    def fit(self, X, y):
        X, y = _check_pair(X, y, 2)
        batch = WindowBatch(X, y, "feedforward", 1, 1)
        return self._fit_batch(batch, X.shape[1], 1)


class _TransformerRegressor(_NetworkRegressor):
    """fit expects sequence windows: X, y of shape (n_samples, d, T)."""

    def fit(self, X, y):
        X, y = _check_pair(X, y, 3)
        batch = WindowBatch(X, y, "transformer", X.shape[2], X.shape[2])
        return self._fit_batch(batch, X.shape[1], X.shape[2])


class VolumePreservingTransformer(_TransformerRegressor):
    """Transformer whose attention reweights the window by a Cayley-transform
    orthogonal matrix and whose feedforward part is the volume-preserving
    residual network; the full map has unit Jacobian determinant on the
    vectorized window space."""

    _kind = "vpt"

    def __init__(
        self,
        n_blocks: int = 2,
        n_linear: int = 1,
        n_units: int = 3,
        eta1: float = 1e-2,
        eta2: float = 1e-6,
        rho1: float = 0.9,
        rho2: float = 0.99,
        delta: float = 1e-8,
        n_epochs: int = 500_000,
        batch_size: int = 128,
        seed: int = 0,
        precision: str = "f32",
    ):
        self.n_blocks = n_blocks
        self.n_linear = n_linear
        self.n_units = n_units
        self.eta1 = eta1
        self.eta2 = eta2
        self.rho1 = rho1
        self.rho2 = rho2
        self.delta = delta
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.seed = seed
        self.precision = precision

    def _spec(self, d: int, seq_len: int) -> ModelSpec:
        return ModelSpec(
            kind="vpt",
            d=d,
            n_blocks=self.n_blocks,
            n_linear=self.n_linear,
            n_units=self.n_units,
            seq_len=seq_len,
        )


class StandardTransformer(_TransformerRegressor):
    """Single-head softmax-attention baseline with plain ResNet feedforward
    layers (the last one linear); carries no volume-preservation guarantee."""

    _kind = "st"

    def __init__(
        self,
        n_blocks: int = 2,
        n_units: int = 3,
        eta1: float = 1e-2,
        eta2: float = 1e-6,
        rho1: float = 0.9,
        rho2: float = 0.99,
        delta: float = 1e-8,
        n_epochs: int = 500_000,
        batch_size: int = 128,
        seed: int = 0,
        precision: str = "f32",
    ):
        self.n_blocks = n_blocks
        self.n_units = n_units
        self.eta1 = eta1
        self.eta2 = eta2
        self.rho1 = rho1
        self.rho2 = rho2
        self.delta = delta
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.seed = seed
        self.precision = precision

    def _spec(self, d: int, seq_len: int) -> ModelSpec:
        return ModelSpec(
            kind="st", d=d, n_blocks=self.n_blocks, n_linear=1, n_units=self.n_units, seq_len=seq_len
        )
