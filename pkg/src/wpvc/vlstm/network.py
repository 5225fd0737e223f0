"""Variational LSTM network: parameters, batched forward pass and manual BPTT.

Shapes use a row-vector convention: activations are ``(batch, features)``
and weights ``(in, out)``.  The forward pass only uses numpy operations that
also accept object arrays of :class:`~wpvc.diffcore.Var`, so the reverse-mode
tape can replay it to check the hand-written backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _ops
from ..diffcore import StructuralError
from .objective import binary_cross_entropy, gaussian_kl, gaussian_loglik, reparameterize

GATES = ("f", "i", "o", "c")
MODES = ("wpvc", "mean_field", "plain_lstm")


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray


def param_shapes(d_x, d_h=100, d_z=10, units=10) -> dict:
    """Ordered parameter names and shapes."""
    u = units
    shapes = {}
    for net, d_in in (("gx", d_x), ("gz", d_z), ("gy", d_h)):
        shapes[f"{net}_W1"] = (d_in, u)
        shapes[f"{net}_b1"] = (u,)
        shapes[f"{net}_W2"] = (u, u)
        shapes[f"{net}_b2"] = (u,)
    shapes["y_W"] = (u, d_x)
    shapes["y_b"] = (d_x,)
    for g in GATES:
        shapes[f"W_{g}"] = (2 * u, d_h)
    for g in GATES:
        shapes[f"U_{g}"] = (d_h, d_h)
    for g in GATES:
        shapes[f"b_{g}"] = (d_h,)
    for head, d_in, d_out in (("enc", u + d_h, d_z), ("pri", d_h, d_z), ("dec", u + d_h, d_x)):
        shapes[f"{head}_mu_W"] = (d_in, d_out)
        shapes[f"{head}_mu_b"] = (d_out,)
        shapes[f"{head}_ls_W"] = (d_in, d_out)
        shapes[f"{head}_ls_b"] = (d_out,)
    return shapes


def init_params(d_x, d_h=100, d_z=10, units=10, rng=None) -> dict:
    """Weights uniform in ``+-1/sqrt(fan_in)``, biases and log-sigma heads zero."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(d_x, d_h, d_z, units).items():
        if len(shape) == 1 or "_ls_" in name:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def dims(params) -> tuple:
    """``(d_x, d_h, d_z, units)`` read off the parameter shapes."""
    return (params["y_W"].shape[1], params["U_f"].shape[0], params["gz_W1"].shape[0],
            params["gx_W1"].shape[1])


def mlp2(params, net, x):
    a1 = np.tanh(x @ params[f"{net}_W1"] + params[f"{net}_b1"])
    return np.tanh(a1 @ params[f"{net}_W2"] + params[f"{net}_b2"]), a1


def lstm_step(params, x_t, prev: LstmState) -> LstmState:
    """One LSTM update.

    f, i, o = sigmoid(W x + U h + b); c_hat = tanh(W_c x + U_c h + b_c);
    c = i * c_hat + f * c_prev; h = o * tanh(c).
    """
    x_t = np.asarray(x_t) if not isinstance(x_t, np.ndarray) else x_t
    d_in, d_h = params["W_f"].shape
    if x_t.shape[-1] != d_in or prev.h.shape[-1] != d_h or prev.c.shape[-1] != d_h:
        raise StructuralError(
            f"lstm_step expects input {d_in} and state {d_h}, got {x_t.shape[-1]}, "
            f"{prev.h.shape[-1]}, {prev.c.shape[-1]}"
        )
    pre = {g: x_t @ params[f"W_{g}"] + prev.h @ params[f"U_{g}"] + params[f"b_{g}"] for g in GATES}
    f, i, o = _ops.sigmoid(pre["f"]), _ops.sigmoid(pre["i"]), _ops.sigmoid(pre["o"])
    c_hat = np.tanh(pre["c"])
    c = i * c_hat + f * prev.c
    return LstmState(o * np.tanh(c), c)


def encode(params, x_t, h_prev):
    """Posterior ``(mu, sigma)`` from ``g_x(x_t)`` and ``h_{t-1}``."""
    ax, _ = mlp2(params, "gx", x_t)
    e_in = np.concatenate([ax, h_prev], axis=-1)
    mu = e_in @ params["enc_mu_W"] + params["enc_mu_b"]
    ls = e_in @ params["enc_ls_W"] + params["enc_ls_b"]
    return mu, np.exp(ls)


def prior(params, h_prev):
    mu = h_prev @ params["pri_mu_W"] + params["pri_mu_b"]
    ls = h_prev @ params["pri_ls_W"] + params["pri_ls_b"]
    return mu, np.exp(ls)


def decode(params, z_t, h_prev):
    """Decoder ``(mu_x, log sigma_x)`` from ``g_z(z_t)`` and ``h_{t-1}``."""
    az, _ = mlp2(params, "gz", z_t)
    d_in = np.concatenate([az, h_prev], axis=-1)
    return d_in @ params["dec_mu_W"] + params["dec_mu_b"], d_in @ params["dec_ls_W"] + params["dec_ls_b"]


def direction_prob(params, h_t):
    ay, _ = mlp2(params, "gy", h_t)
    return _ops.sigmoid(ay @ params["y_W"] + params["y_b"])


def forward(params, X, Y, eps, mode="wpvc", keep=True):
    """Run the network over a batch of windows.

    Parameters
    ----------
    X : array (B, T, d_x)
        Standardized inputs.
    Y : array (B, T, d_x)
        Direction targets for the *next* step, in {0, 1}.
    eps : array (B, T, d_z)
        Standard-normal noise (already coupled by the latent copula).
    mode : {"wpvc", "mean_field", "plain_lstm"}
        ``plain_lstm`` pins ``z = 0`` and drops the KL term.

    Returns
    -------
    terms : dict of (B, T) arrays ``bce``, ``recon``, ``kl`` plus ``mu``, ``sigma``,
        ``mu0``, ``sigma0`` and ``z`` of shape (B, T, d_z)
    cache : list of per-step dicts (empty when ``keep`` is False)
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    B, T, d_x = X.shape
    p_dx, d_h, d_z, _ = dims(params)
    if d_x != p_dx or eps.shape[-1] != d_z:
        raise StructuralError(f"input dims ({d_x}, {eps.shape[-1]}) do not match parameters ({p_dx}, {d_z})")
    variational = mode != "plain_lstm"
    h = np.zeros((B, d_h))
    c = np.zeros((B, d_h))
    out = {k: [] for k in ("bce", "recon", "kl", "mu", "sigma", "mu0", "sigma0", "z")}
    cache = []
    for t in range(T):
        x = X[:, t]
        ax, ax1 = mlp2(params, "gx", x)
        if variational:
            e_in = np.concatenate([ax, h], axis=-1)
            mu = e_in @ params["enc_mu_W"] + params["enc_mu_b"]
            ls = e_in @ params["enc_ls_W"] + params["enc_ls_b"]
            mu0 = h @ params["pri_mu_W"] + params["pri_mu_b"]
            ls0 = h @ params["pri_ls_W"] + params["pri_ls_b"]
            sig, sig0 = np.exp(ls), np.exp(ls0)
            z = reparameterize(mu, sig, eps[:, t])
            kl = gaussian_kl(mu, ls, mu0, ls0)
        else:
            mu = ls = mu0 = ls0 = e_in = None
            sig = sig0 = np.ones((B, d_z))
            z = np.zeros((B, d_z))
            kl = np.zeros(B)
        az, az1 = mlp2(params, "gz", z)
        d_in = np.concatenate([az, h], axis=-1)
        xm = d_in @ params["dec_mu_W"] + params["dec_mu_b"]
        xls = d_in @ params["dec_ls_W"] + params["dec_ls_b"]
        recon = gaussian_loglik(x, xm, xls)
        inp = np.concatenate([ax, az], axis=-1)
        pre = {g: inp @ params[f"W_{g}"] + h @ params[f"U_{g}"] + params[f"b_{g}"] for g in GATES}
        f, i, o = _ops.sigmoid(pre["f"]), _ops.sigmoid(pre["i"]), _ops.sigmoid(pre["o"])
        ch = np.tanh(pre["c"])
        c_new = i * ch + f * c
        tc = np.tanh(c_new)
        h_new = o * tc
        ay, ay1 = mlp2(params, "gy", h_new)
        p = _ops.sigmoid(ay @ params["y_W"] + params["y_b"])
        bce = binary_cross_entropy(Y[:, t], p)
        if keep:
            cache.append(dict(x=x, ax=ax, ax1=ax1, e_in=e_in, mu=mu, ls=ls, mu0=mu0, ls0=ls0, sig=sig,
                              sig0=sig0, eps=eps[:, t], z=z, az=az, az1=az1, d_in=d_in, xm=xm, xls=xls,
                              inp=inp, f=f, i=i, o=o, ch=ch, c_prev=c, c=c_new, tc=tc, h_prev=h,
                              h=h_new, ay=ay, ay1=ay1, p=p, y=Y[:, t]))
        for k, v in (("bce", bce), ("recon", recon), ("kl", kl), ("mu", mu if variational else z),
                     ("sigma", sig), ("mu0", mu0 if variational else z), ("sigma0", sig0), ("z", z)):
            out[k].append(v)
        h, c = h_new, c_new
    terms = {k: np.stack(v, axis=1) for k, v in out.items()}
    return terms, cache


def batch_loss(terms, logc):
    """``(L_P, L_VAE)`` averaged over the batch and summed over time.

    ``L_VAE`` sums the step-wise ELBO ``recon - KL - log c`` in time order.
    """
    B = terms["bce"].shape[0]
    l_p = 0.0
    l_vae = 0.0
    for t in range(terms["bce"].shape[1]):
        l_p = l_p + np.sum(terms["bce"][:, t])
        l_vae = l_vae + np.sum(terms["recon"][:, t] - terms["kl"][:, t] - logc[:, t])
    return l_p / B, l_vae / B


def _mlp2_back(params, grads, net, x, a1, a2, da2):
    dpre2 = da2 * (1.0 - a2 * a2)
    grads[f"{net}_W2"] += a1.T @ dpre2
    grads[f"{net}_b2"] += dpre2.sum(axis=0)
    da1 = dpre2 @ params[f"{net}_W2"].T
    dpre1 = da1 * (1.0 - a1 * a1)
    grads[f"{net}_W1"] += x.T @ dpre1
    grads[f"{net}_b1"] += dpre1.sum(axis=0)
    return dpre1 @ params[f"{net}_W1"].T


def backward(params, cache, mode="wpvc"):
    """Gradients of ``L_P - L_VAE`` (as in :func:`batch_loss`) by backpropagation through time.

    Returns ``(grads, dz)`` where ``dz`` (B, T, d_z) is the derivative of the
    loss with respect to the sampled latent ``z`` (zero in ``plain_lstm``).
    """
    d_x, d_h, d_z, u = dims(params)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    B = cache[0]["x"].shape[0]
    T = len(cache)
    scale = 1.0 / B
    variational = mode != "plain_lstm"
    dh_next = np.zeros((B, d_h))
    dc_next = np.zeros((B, d_h))
    dz_all = np.zeros((B, T, d_z))
    for t in range(T - 1, -1, -1):
        s = cache[t]
        # direction head
        dlogit = (s["p"] - s["y"]) * scale
        grads["y_W"] += s["ay"].T @ dlogit
        grads["y_b"] += dlogit.sum(axis=0)
        dh = _mlp2_back(params, grads, "gy", s["h"], s["ay1"], s["ay"], dlogit @ params["y_W"].T)
        dh = dh + dh_next
        # LSTM cell
        dc = dc_next + dh * s["o"] * (1.0 - s["tc"] ** 2)
        dpre = {
            "f": dc * s["c_prev"] * s["f"] * (1.0 - s["f"]),
            "i": dc * s["ch"] * s["i"] * (1.0 - s["i"]),
            "o": dh * s["tc"] * s["o"] * (1.0 - s["o"]),
            "c": dc * s["i"] * (1.0 - s["ch"] ** 2),
        }
        dinp = np.zeros_like(s["inp"])
        dh_prev = np.zeros((B, d_h))
        for g in GATES:
            grads[f"W_{g}"] += s["inp"].T @ dpre[g]
            grads[f"U_{g}"] += s["h_prev"].T @ dpre[g]
            grads[f"b_{g}"] += dpre[g].sum(axis=0)
            dinp += dpre[g] @ params[f"W_{g}"].T
            dh_prev += dpre[g] @ params[f"U_{g}"].T
        dc_next = dc * s["f"]
        dax = dinp[:, :u]
        daz = dinp[:, u:]
        # decoder: loss carries -recon
        r = s["x"] - s["xm"]
        inv_var = np.exp(-2.0 * s["xls"])
        dxm = -(r * inv_var) * scale
        dxls = -(-1.0 + r * r * inv_var) * scale
        grads["dec_mu_W"] += s["d_in"].T @ dxm
        grads["dec_mu_b"] += dxm.sum(axis=0)
        grads["dec_ls_W"] += s["d_in"].T @ dxls
        grads["dec_ls_b"] += dxls.sum(axis=0)
        dd_in = dxm @ params["dec_mu_W"].T + dxls @ params["dec_ls_W"].T
        daz = daz + dd_in[:, :u]
        dh_prev += dd_in[:, u:]
        dz = _mlp2_back(params, grads, "gz", s["z"], s["az1"], s["az"], daz)
        if variational:
            dz_all[:, t] = dz
            # KL, closed form
            diff = s["mu"] - s["mu0"]
            inv0 = np.exp(-2.0 * s["ls0"])
            dmu = diff * inv0 * scale + dz
            dls = (-1.0 + s["sig"] ** 2 * inv0) * scale + dz * s["sig"] * s["eps"]
            dmu0 = -diff * inv0 * scale
            dls0 = (1.0 - (s["sig"] ** 2 + diff * diff) * inv0) * scale
            grads["enc_mu_W"] += s["e_in"].T @ dmu
            grads["enc_mu_b"] += dmu.sum(axis=0)
            grads["enc_ls_W"] += s["e_in"].T @ dls
            grads["enc_ls_b"] += dls.sum(axis=0)
            de_in = dmu @ params["enc_mu_W"].T + dls @ params["enc_ls_W"].T
            dax = dax + de_in[:, :u]
            dh_prev += de_in[:, u:]
            grads["pri_mu_W"] += s["h_prev"].T @ dmu0
            grads["pri_mu_b"] += dmu0.sum(axis=0)
            grads["pri_ls_W"] += s["h_prev"].T @ dls0
            grads["pri_ls_b"] += dls0.sum(axis=0)
            dh_prev += dmu0 @ params["pri_mu_W"].T + dls0 @ params["pri_ls_W"].T
        _mlp2_back(params, grads, "gx", s["x"], s["ax1"], s["ax"], dax)
        dh_next = dh_prev
    return grads, dz_all


def loss_and_grad(params, X, Y, eps, logc, mode="wpvc"):
    terms, cache = forward(params, X, Y, eps, mode)
    l_p, l_vae = batch_loss(terms, logc)
    grads, dz = backward(params, cache, mode)
    return l_p, l_vae, terms, grads, dz


__all__ = [
    "GATES",
    "LstmState",
    "MODES",
    "backward",
    "batch_loss",
    "decode",
    "dims",
    "direction_prob",
    "encode",
    "forward",
    "init_params",
    "loss_and_grad",
    "lstm_step",
    "param_shapes",
    "prior",
]
