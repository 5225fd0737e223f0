"""Loss pieces of the variational LSTM: reconstruction, KL, copula term, cross-entropy.

Every function is elementwise or reduces over the last axis only, so the
same code evaluates one time step, a ``(batch, time)`` grid, or object
arrays of tape variables.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .. import _ops
from ..vine import vine_log_density

LOG2PI = math.log(2.0 * math.pi)
PROB_FLOOR = 1e-12


def reparameterize(mu, sigma, eps):
    """``z = mu + sigma * eps``; ``eps`` is treated as a constant."""
    return mu + sigma * eps


def standardize(z, mu, sigma):
    return (z - mu) / sigma


def gaussian_loglik(x, mu, log_sigma):
    """Diagonal Gaussian log-density summed over the last axis."""
    r = x - mu
    terms = -0.5 * LOG2PI - log_sigma - 0.5 * r * r * np.exp(-2.0 * log_sigma)
    return np.sum(terms, axis=-1)


def mean_field_log_q(z, mu, sigma):
    """``-sum log sigma - sum (z - mu)^2 / (2 sigma^2) - (d/2) log 2 pi`` over all entries."""
    z, mu, sigma = np.broadcast_arrays(np.asarray(z), np.asarray(mu), np.asarray(sigma))
    d = z.size
    r = z - mu
    return -np.sum(np.log(np.abs(sigma))) - np.sum(r * r / (2.0 * sigma * sigma)) - 0.5 * d * LOG2PI


def gaussian_kl(mu, log_sigma, mu0, log_sigma0):
    """Closed-form ``KL(N(mu, sigma^2) || N(mu0, sigma0^2))`` summed over the last axis."""
    d = mu - mu0
    terms = (log_sigma0 - log_sigma
             + (np.exp(2.0 * log_sigma) + d * d) * np.exp(-2.0 * log_sigma0) * 0.5 - 0.5)
    return np.sum(terms, axis=-1)


def copula_log_posterior(z, mu, sigma, vine, params=None):
    """Vine log-density at ``u = Phi((z - mu) / sigma)`` plus :func:`mean_field_log_q`.

    ``z``, ``mu`` and ``sigma`` have shape ``(..., d)`` with ``d`` the vine
    dimension; the copula term is summed over the leading axes.
    """
    u = _ops.norm_cdf(standardize(np.asarray(z), np.asarray(mu), np.asarray(sigma)))
    mf = mean_field_log_q(z, mu, sigma)
    if vine is None:
        return mf
    return np.sum(vine_log_density(vine, u, params)) + mf


def binary_cross_entropy(y, p, clamp=PROB_FLOOR):
    """``-sum [y log p + (1 - y) log(1 - p)]`` over the last axis.

    Probabilities are clamped into ``[clamp, 1 - clamp]``; a warning is
    issued when the clamp is active on float input.
    """
    y = np.asarray(y)
    if not isinstance(p, np.ndarray) or p.dtype != object:
        p = np.asarray(p, dtype=float)
        if np.any((p < clamp) | (p > 1.0 - clamp)):
            warnings.warn("probability clamped at 1e-12 in cross-entropy", RuntimeWarning, stacklevel=2)
    pc = _ops.clip(p, clamp, 1.0 - clamp)
    return -np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc), axis=-1)


def prediction_loss(y, p):
    """Cross-entropy of direction probabilities summed over time and instruments."""
    y = np.asarray(y, dtype=float)
    if np.shape(y) != np.shape(p):
        raise ValueError("targets and probabilities must have equal shapes")
    return float(np.sum(binary_cross_entropy(y, p)))


def total_loss(l_p, l_vae):
    """Combined objective ``L_P - L_VAE`` (minimized)."""
    return l_p - l_vae
