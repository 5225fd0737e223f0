"""Variational LSTM with a copula-coupled latent posterior."""
from .estimator import VLSTMForecaster
from .latent import coupled_noise, eta_gradient, independent_vine, refresh_vine
from .network import LstmState, decode, encode, forward, init_params, lstm_step, prior
from .objective import (
    binary_cross_entropy,
    copula_log_posterior,
    gaussian_kl,
    gaussian_loglik,
    mean_field_log_q,
    prediction_loss,
    reparameterize,
    total_loss,
)
from .training import (
    DivergenceError,
    NotFittedError,
    TrainingConfig,
    TrainResult,
    VLSTMModel,
    forecast,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "DivergenceError",
    "LstmState",
    "NotFittedError",
    "TrainResult",
    "TrainingConfig",
    "VLSTMForecaster",
    "VLSTMModel",
    "binary_cross_entropy",
    "copula_log_posterior",
    "coupled_noise",
    "decode",
    "encode",
    "eta_gradient",
    "forecast",
    "forward",
    "gaussian_kl",
    "gaussian_loglik",
    "independent_vine",
    "init_params",
    "load_checkpoint",
    "lstm_step",
    "mean_field_log_q",
    "prediction_loss",
    "prior",
    "refresh_vine",
    "reparameterize",
    "save_checkpoint",
    "total_loss",
    "train",
]
