"""Training loop, optimizers, checkpoints and one-step-ahead forecasting."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import special

from ..paircopula import ALL_FAMILIES
from ..vine import dumps, loads
from . import network as net
from .latent import apply_eta_step, coupled_noise, eta_gradient, independent_vine, refresh_vine

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Loss became NaN or infinite; ``model`` holds the last good checkpoint."""

    def __init__(self, message, model=None, epoch=None):
        super().__init__(message)
        self.model = model
        self.epoch = epoch


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 5e-4
    seed: int = 0
    checkpoint_every: int = 10
    loss_threshold: float | None = None
    refresh_every: int = 10
    ablation: str = "wpvc"
    window: int = 30
    stride: int = 1
    hidden_size: int = 100
    latent_dim: int = 10
    feature_units: int = 10
    optimizer: str = "sgd"
    clip_norm: float = 5.0
    truncation: float = 0.05
    families: tuple = tuple(f.value for f in ALL_FAMILIES)
    eta_learning_rate: float | None = None
    eta_samples: int = 16
    refresh_rows: int = 1000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.ablation not in net.MODES:
            raise ValueError(f"ablation must be one of {net.MODES}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.window < 1 or self.stride < 1 or self.batch_size < 1:
            raise ValueError("window, stride and batch size must be positive")
        object.__setattr__(self, "families", tuple(self.families))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class VLSTMModel:
    """Trained parameters plus everything needed to forecast on the raw scale."""

    params: dict
    vine: object
    config: TrainingConfig
    mean: np.ndarray
    scale: np.ndarray
    epoch: int = 0
    trained: bool = True

    @property
    def mode(self):
        return self.config.ablation


@dataclass
class TrainResult:
    model: VLSTMModel
    trace: list = field(default_factory=list)  # (epoch, L_P, -L_VAE, total)
    converged: bool | None = None
    checkpoints: list = field(default_factory=list)


# -- optimizers -------------------------------------------------------------------

class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k in params:
            params[k] -= self.lr * grads[k]


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        for k in params:
            m = self.m.setdefault(k, np.zeros_like(params[k]))
            v = self.v.setdefault(k, np.zeros_like(params[k]))
            m *= self.b1
            m += (1 - self.b1) * grads[k]
            v *= self.b2
            v += (1 - self.b2) * grads[k] ** 2
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def clip_gradients(grads, max_norm):
    """Scale all gradients together so their global norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        f = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * f
    return norm


# -- data shaping -----------------------------------------------------------------

def make_windows(R, window, stride=1):
    """Overlapping windows of ``window + 1`` rows: inputs plus the next-step target row."""
    R = np.asarray(R, dtype=float)
    starts = range(0, R.shape[0] - window, stride)
    return np.stack([R[s:s + window + 1] for s in starts])


def _scale_of(R):
    sd = R.std(axis=0)
    return np.where(sd > 1e-12, sd, 1.0)


# -- training -----------------------------------------------------------------------

def train(R, cfg: TrainingConfig = TrainingConfig(), checkpoint_dir=None, callback=None) -> TrainResult:
    """Fit the variational LSTM on a ``(T, d_x)`` return matrix.

    Each epoch shuffles the overlapping windows, takes one optimizer step
    per batch, then one pathwise step on the latent copula parameters.  The
    latent vine is re-selected every ``refresh_every`` epochs from the
    prior-standardized latent draws of that epoch.  Stops early once the
    epoch-mean loss drops below ``loss_threshold``.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2:
        raise ValueError("returns must be a (T, d) matrix")
    if R.shape[0] < 2 * cfg.window:
        raise ValueError(f"need at least {2 * cfg.window} observations, got {R.shape[0]}")
    if not np.all(np.isfinite(R)):
        raise ValueError("returns contain non-finite values")
    mode = cfg.ablation
    rng = np.random.default_rng(cfg.seed)
    aux = np.random.default_rng([cfg.seed, 1])
    d_x = R.shape[1]
    mean, scale = R.mean(axis=0), _scale_of(R)
    S = (R - mean) / scale
    win = make_windows(S, cfg.window, cfg.stride)
    up = (make_windows(R, cfg.window, cfg.stride)[:, 1:] > 0).astype(float)
    X = win[:, :-1]
    n_win = X.shape[0]
    params = net.init_params(d_x, cfg.hidden_size, cfg.latent_dim, cfg.feature_units, rng)
    vine = independent_vine(cfg.latent_dim)
    refresh = mode == "wpvc" and vine is not None
    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(cfg.learning_rate)
    eta_lr = cfg.learning_rate if cfg.eta_learning_rate is None else cfg.eta_learning_rate
    result = TrainResult(VLSTMModel({k: v.copy() for k, v in params.items()}, vine, cfg, mean, scale, 0))
    last_good = result.model
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_win)
        sum_p = sum_vae = 0.0
        pooled = []
        for start in range(0, n_win, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], up[idx]
            w = rng.random((len(idx), cfg.window, cfg.latent_dim))
            eps, logc = coupled_noise(vine, w)
            l_p, l_vae, terms, grads, dz = net.loss_and_grad(params, xb, yb, eps, logc, mode)
            total = l_p - l_vae
            if not np.isfinite(total):
                raise DivergenceError(f"loss diverged at epoch {epoch}", last_good, last_good.epoch)
            clip_gradients(grads, cfg.clip_norm)
            opt.step(params, grads)
            sum_p += l_p * len(idx)
            sum_vae += l_vae * len(idx)
            if refresh:
                pooled.append((terms["z"] - terms["mu0"]) / terms["sigma0"])
                last = (w, dz, terms["sigma"], len(idx))
        if refresh:
            w, dz, sig, b = last
            flat_w = w.reshape(-1, cfg.latent_dim)
            flat_g = (dz * sig).reshape(-1, cfg.latent_dim)
            pick = aux.choice(flat_w.shape[0], size=min(cfg.eta_samples, flat_w.shape[0]), replace=False)
            g_eta = eta_gradient(vine, flat_w[pick], flat_g[pick], b)
            if g_eta:
                factor = flat_w.shape[0] / len(pick)
                vine = apply_eta_step(vine, {k: g * factor for k, g in g_eta.items()}, eta_lr)
            if epoch % cfg.refresh_every == 0:
                s = np.concatenate([p.reshape(-1, cfg.latent_dim) for p in pooled])
                rows = aux.choice(s.shape[0], size=min(cfg.refresh_rows, s.shape[0]), replace=False)
                u = special.ndtr(s[np.sort(rows)])
                try:
                    vine = refresh_vine(u, cfg.truncation, cfg.families)
                except Exception as exc:  # keep the previous vine on a failed refit
                    log.warning("latent vine refresh failed at epoch %d: %s", epoch, exc)
        l_p_mean, l_vae_mean = sum_p / n_win, sum_vae / n_win
        total_mean = l_p_mean - l_vae_mean
        result.trace.append((epoch, float(l_p_mean), float(-l_vae_mean), float(total_mean)))
        if not np.isfinite(total_mean):
            raise DivergenceError(f"loss diverged at epoch {epoch}", last_good, last_good.epoch)
        if callback is not None:
            callback(epoch, total_mean)
        log.debug("epoch %d: L_P=%.6g -L_VAE=%.6g total=%.6g", epoch, l_p_mean, -l_vae_mean, total_mean)
        done = cfg.loss_threshold is not None and total_mean < cfg.loss_threshold
        if epoch % cfg.checkpoint_every == 0 or done or epoch == cfg.epochs:
            last_good = VLSTMModel({k: v.copy() for k, v in params.items()}, vine, cfg, mean, scale, epoch)
            if checkpoint_dir is not None and epoch % cfg.checkpoint_every == 0:
                path = f"{checkpoint_dir}/checkpoint_{epoch:05d}.npz"
                save_checkpoint(last_good, path)
                result.checkpoints.append(path)
        if done:
            break
    result.model = last_good
    result.converged = None if cfg.loss_threshold is None else bool(done)
    return result


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(model: VLSTMModel, path):
    """Write parameters (float64, row-major) with a JSON metadata entry."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "epoch": model.epoch,
        "seed": model.config.seed,
        "vine": None if model.vine is None else dumps(model.vine),
        "param_names": list(model.params),
    }
    arrays = {f"param/{k}": np.ascontiguousarray(v, dtype=np.float64) for k, v in model.params.items()}
    arrays["norm/mean"] = np.asarray(model.mean, dtype=np.float64)
    arrays["norm/scale"] = np.asarray(model.scale, dtype=np.float64)
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> VLSTMModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: z[f"param/{k}"].copy() for k in meta["param_names"]}
        mean, scale = z["norm/mean"].copy(), z["norm/scale"].copy()
    cfg = TrainingConfig.from_dict(meta["config"])
    vine = None if meta["vine"] is None else loads(meta["vine"])
    return VLSTMModel(params, vine, cfg, mean, scale, int(meta["epoch"]))


# -- forecasting ------------------------------------------------------------------

def _run_history(params, S, mode):
    """LSTM state after consuming the standardized rows ``S`` (B, L, d_x) with posterior-mean z."""
    B = S.shape[0]
    _, d_h, d_z, _ = net.dims(params)
    state = net.LstmState(np.zeros((B, d_h)), np.zeros((B, d_h)))
    for t in range(S.shape[1]):
        x = S[:, t]
        if mode == "plain_lstm":
            z = np.zeros((B, d_z))
        else:
            z, _ = net.encode(params, x, state.h)
        ax, _ = net.mlp2(params, "gx", x)
        az, _ = net.mlp2(params, "gz", z)
        state = net.lstm_step(params, np.concatenate([ax, az], axis=-1), state)
    return state


def forecast(model: VLSTMModel, R, start=None, sample=False, random_state=None):
    """One-step-ahead forecasts of rows ``start .. len(R)`` of ``R``.

    Row ``t`` is forecast from the ``window`` rows before it (fewer near the
    start).  The latent draw uses the prior mean, or one prior sample when
    ``sample`` is true.

    Returns
    -------
    dict with ``mu``, ``sigma``, ``p_up`` arrays of shape ``(len(R) + 1 - start, d_x)``;
    the last row forecasts one step beyond the data.
    """
    if model is None or not getattr(model, "trained", False):
        raise NotFittedError("model is not trained")
    R = np.asarray(R, dtype=float)
    W = model.config.window
    start = W if start is None else int(start)
    if not 1 <= start <= R.shape[0]:
        raise ValueError(f"start must lie in [1, {R.shape[0]}]")
    params, mode = model.params, model.mode
    _, _, d_z, _ = net.dims(params)
    S = (R - model.mean) / model.scale
    targets = np.arange(start, R.shape[0] + 1)
    rng = np.random.default_rng(random_state)
    out = {k: np.empty((len(targets), R.shape[1])) for k in ("mu", "sigma", "p_up")}
    groups = {}
    for j, t in enumerate(targets):
        groups.setdefault(min(W, t), []).append(j)
    for L, js in sorted(groups.items()):
        hist = np.stack([S[targets[j] - L:targets[j]] for j in js])
        state = _run_history(params, hist, mode)
        if mode == "plain_lstm":
            z = np.zeros((len(js), d_z))
        else:
            mu0, sig0 = net.prior(params, state.h)
            z = mu0 + sig0 * rng.standard_normal(mu0.shape) if sample else mu0
        xm, xls = net.decode(params, z, state.h)
        out["mu"][js] = model.mean + model.scale * xm
        out["sigma"][js] = model.scale * np.exp(xls)
        out["p_up"][js] = net.direction_prob(params, state.h)
    return out


__all__ = [
    "DivergenceError",
    "NotFittedError",
    "TrainResult",
    "TrainingConfig",
    "VLSTMModel",
    "clip_gradients",
    "forecast",
    "load_checkpoint",
    "make_windows",
    "save_checkpoint",
    "train",
]
