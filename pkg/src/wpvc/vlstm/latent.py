"""The copula over latent dimensions: coupled noise, pathwise eta-gradients, refresh."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import special

from .. import _ops
from .. import diffcore as dc
from ..paircopula import _BOUNDS, F, UMAX, UMIN, PairCopula
from ..vine import VineStructure, build_candidate_vine, inverse_levels, inverse_rosenblatt, truncate
from ..vine import vine_log_density
from ..vine.estimator import WeightedPartialVine


def independent_vine(d_z: int) -> VineStructure | None:
    """A fully truncated vine over ``d_z`` latent dimensions (``None`` if ``d_z < 2``)."""
    if d_z < 2:
        return None
    v = build_candidate_vine(np.eye(d_z), inverse_levels(d_z)[0])
    return truncate(v, 1.0)


def coupled_noise(vine, w):
    """Map uniforms ``w`` (..., d_z) to copula-coupled standard normals.

    Returns ``(eps, logc)`` where ``logc`` is the vine log-density at the
    coupled uniforms (zeros when the vine is absent or fully truncated).
    """
    w = np.clip(w, UMIN, UMAX)
    if vine is None:
        return special.ndtri(w), np.zeros(w.shape[:-1])
    flat = w.reshape(-1, w.shape[-1])
    u = inverse_rosenblatt(vine, flat)
    logc = vine_log_density(vine, u)
    eps = special.ndtri(np.clip(u, UMIN, UMAX))
    return eps.reshape(w.shape), np.asarray(logc).reshape(w.shape[:-1])


def eta_params(vine) -> dict:
    """Edge key -> parameter tuple for every active edge."""
    if vine is None:
        return {}
    return {e.key: e.copula.params for e in vine.edges if e.active}


def eta_gradient(vine, w, g, batch_size):
    """Pathwise gradient of the loss with respect to the copula parameters.

    Each row ``s`` of ``w`` contributes ``sum_k g[s, k] * eps_k(w_s; eta) +
    log c(u(w_s; eta); eta) / batch_size``, where ``g = dL/dz * sigma`` and
    ``eps = Phi^{-1}(u)``.  Returns ``{edge key: gradient array}``.
    """
    current = eta_params(vine)
    if not current:
        return {}
    tape = dc.Tape()
    pv = {k: [tape.var(x) for x in p] for k, p in current.items()}
    total = tape.constant(0.0)
    for ws, gs in zip(np.clip(w, UMIN, UMAX), g):
        wv = [tape.constant(float(x)) for x in ws]
        u = inverse_rosenblatt(vine, wv, params=pv, tape=True)
        u = _ops.clip(np.array(u, dtype=object), UMIN, UMAX)
        eps = _ops.norm_ppf(u)
        total = total + np.sum(gs * eps) + vine_log_density(vine, u, pv) / batch_size
    adj = dc.backward(tape, total)
    return {k: np.array([adj[x.index] for x in vs]) for k, vs in pv.items()}


def _project(family, params):
    bounds = list(_BOUNDS[family])
    if family is F.FRANK:
        bounds = [(1e-4, 60.0)] if params[0] > 0 else [(-60.0, -1e-4)]
    return tuple(float(np.clip(p, lo, hi)) for p, (lo, hi) in zip(params, bounds))


def apply_eta_step(vine, grads, lr):
    """Gradient step on the active copula parameters, projected into their domains."""
    if not grads:
        return vine

    def step(e):
        if e.key not in grads:
            return e
        new = np.asarray(e.copula.params) - lr * grads[e.key]
        return replace(e, copula=PairCopula(e.copula.family, _project(e.copula.family, new)))

    return vine.replace_edges(step)


def refresh_vine(u, truncation, families, weights=None):
    """Re-select and fit the latent vine on uniforms ``u`` (rows, d_z)."""
    est = WeightedPartialVine(truncation=truncation, families=families, weights=weights, pseudo_obs=False)
    est.fit(np.clip(u, UMIN, UMAX))
    return est.structure_
