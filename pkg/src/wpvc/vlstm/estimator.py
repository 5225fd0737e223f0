from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..paircopula import ALL_FAMILIES
from .training import TrainingConfig, forecast, train


class VLSTMForecaster(BaseEstimator):
    """One-step-ahead return forecaster with a copula-coupled variational LSTM.

    ``fit(X)`` takes a ``(T, d)`` return matrix; ``y`` is ignored because the
    targets are the next rows of ``X``.  ``predict(X)`` returns the predictive
    mean of rows ``window .. T`` (the last row is one step beyond ``X``).

    Parameters mirror :class:`~wpvc.vlstm.TrainingConfig`.

    Attributes
    ----------
    model_ : VLSTMModel
    loss_trace_ : ndarray (epochs, 4)
        Columns: epoch, L_P, -L_VAE, total loss.
    converged_ : bool or None
        ``None`` when no loss threshold was set.
    """

    def __init__(self, ablation="wpvc", hidden_size=100, latent_dim=10, feature_units=10, window=30,
                 stride=1, epochs=500, batch_size=32, learning_rate=5e-4, optimizer="sgd", clip_norm=5.0,
                 truncation=0.05, refresh_every=10, families=tuple(f.value for f in ALL_FAMILIES),
                 loss_threshold=None, checkpoint_every=10, eta_learning_rate=None, eta_samples=16,
                 random_state=0):
        self.ablation = ablation
        self.hidden_size = hidden_size
        self.latent_dim = latent_dim
        self.feature_units = feature_units
        self.window = window
        self.stride = stride
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.truncation = truncation
        self.refresh_every = refresh_every
        self.families = families
        self.loss_threshold = loss_threshold
        self.checkpoint_every = checkpoint_every
        self.eta_learning_rate = eta_learning_rate
        self.eta_samples = eta_samples
        self.random_state = random_state

    def _config(self) -> TrainingConfig:
        p = self.get_params()
        p["seed"] = p.pop("random_state")
        return TrainingConfig(**p)

    def fit(self, X, y=None, checkpoint_dir=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        res = train(X, self._config(), checkpoint_dir=checkpoint_dir)
        self.model_ = res.model
        self.loss_trace_ = np.array(res.trace, dtype=float)
        self.converged_ = res.converged
        return self

    def forecast(self, X, start=None):
        """Dict of ``mu``, ``sigma`` and ``p_up`` arrays (see :func:`wpvc.vlstm.forecast`)."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float, ensure_min_samples=1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return forecast(self.model_, X, start)

    def predict(self, X):
        return self.forecast(X)["mu"]

    def predict_proba(self, X):
        """Up-probabilities for the next step, per instrument."""
        return self.forecast(X)["p_up"]

    def score(self, X, y=None):
        """Negative mean squared one-step error on rows ``window .. T-1``."""
        X = check_array(X, dtype=float)
        mu = self.predict(X)[:-1]
        return -float(np.mean((X[self.window:] - mu) ** 2))
