"""Vine log-density, inverse-Rosenblatt sampling, truncation and copula assignment."""
from __future__ import annotations

import warnings

import numpy as np

from ..paircopula import ALL_FAMILIES, INDEPENDENCE, PairCopula, SelectionError, select_family, UMAX, UMIN
from .structure import VineEdge, VineStructure


class VineFitError(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        super().__init__(f"{len(failures)} vine edge fit(s) failed: " + "; ".join(failures))


def truncate(v: VineStructure, rho_trun: float) -> VineStructure:
    """Flag every edge with ``|partial_rho| < rho_trun`` as truncated."""
    if not 0.0 <= rho_trun <= 1.0:
        raise ValueError("truncation threshold must lie in [0, 1]")
    from dataclasses import replace

    out = v.replace_edges(lambda e: replace(e, truncated=abs(e.partial_rho) < rho_trun))
    return replace(out, truncation_threshold=float(rho_trun))


def _edge_copula(e: VineEdge, params=None):
    if e.truncated or e.copula is None:
        return INDEPENDENCE, None
    return e.copula, params


def _forward(v: VineStructure, cols, params=None, want_log=True):
    """Propagate pseudo-observations tree by tree.

    ``cols`` maps variable -> values (float arrays or tape variables);
    ``params`` optionally maps edge key -> parameter list (tape variables).
    Returns the summed log-density and the pseudo-observation table.
    """
    pseudo = {(i, frozenset()): cols[i] for i in range(v.n)}
    total = 0.0
    last = len(v.trees) - 1
    for j, tree in enumerate(v.trees):
        for e in tree:
            ua = pseudo[(e.a, e.conditioning)]
            ub = pseudo[(e.b, e.conditioning)]
            cop, p = _edge_copula(e, None if params is None else params.get(e.key))
            if cop is INDEPENDENCE:
                if j < last:
                    pseudo[(e.a, e.conditioning | {e.b})] = ua
                    pseudo[(e.b, e.conditioning | {e.a})] = ub
                continue
            if want_log:
                total = total + cop.log_density(ua, ub, params=p)
            if j < last:
                pseudo[(e.a, e.conditioning | {e.b})] = cop.h(ua, ub, params=p)
                pseudo[(e.b, e.conditioning | {e.a})] = cop.h(ub, ua, params=p)
    return total, pseudo


def vine_log_density(v: VineStructure, u, params=None):
    """Log-density of the vine copula at the rows of ``u`` (shape ``(n,)`` or ``(T, n)``).

    Truncated and independence edges contribute 0.  Boundary coordinates are
    clamped into ``[1e-12, 1 - 1e-12]`` with a warning.
    """
    if isinstance(u, np.ndarray) and u.dtype == object:
        cols = {i: u[..., i] for i in range(v.n)}
        total, _ = _forward(v, cols, params)
        return total
    arr = np.asarray(u, dtype=float)
    if arr.shape[-1] != v.n:
        raise ValueError(f"expected {v.n} coordinates, got {arr.shape[-1]}")
    if np.any((arr <= 0) | (arr >= 1)):
        warnings.warn("vine density evaluated at boundary coordinates; clamped", RuntimeWarning)
        arr = np.clip(arr, UMIN, UMAX)
    cols = {i: arr[..., i] for i in range(v.n)}
    total, _ = _forward(v, cols, params)
    if np.isscalar(total) or np.ndim(total) == 0:
        return np.zeros(arr.shape[:-1]) + total
    return total


def sampling_order(v: VineStructure):
    """Peel variables off the vine top-down.

    Returns ``[(var, chain), ...]`` in *sampling* order; ``chain`` lists the
    edges having ``var`` in their conditioned set, from the highest tree to
    ``T_1``.  Every chain edge's partner pseudo-observation only involves
    variables sampled earlier.
    """
    edges = list(v.edges)
    remaining = set(range(v.n))
    peeled = []
    while len(remaining) > 1:
        top = [e for e in edges if e.union == frozenset(remaining)]
        if len(top) != 1:
            raise RuntimeError("vine is not regular: no unique top edge")
        top = top[0]
        chosen = None
        for a in (top.b, top.a):
            if all(a in e.conditioned for e in edges if a in e.union):
                chosen = a
                break
        if chosen is None:
            raise RuntimeError("no variable can be peeled from the top edge")
        chain = sorted((e for e in edges if chosen in e.conditioned),
                       key=lambda e: -len(e.conditioning))
        peeled.append((chosen, chain))
        edges = [e for e in edges if chosen not in e.union]
        remaining.remove(chosen)
    peeled.append((remaining.pop(), []))
    return peeled[::-1]


def inverse_rosenblatt(v: VineStructure, w, params=None, tape=False):
    """Map independent uniforms ``w`` (``(T, n)`` or ``(n,)``) to vine samples.

    With ``tape=True`` ``w`` is a 1-d sequence of scalars and ``params`` may
    hold tape variables per edge key; inverse h-functions are differentiated
    implicitly.
    """
    if not tape:
        w = np.asarray(w, dtype=float)
    pseudo = {}
    out = [None] * v.n
    for var, chain in sampling_order(v):
        x = w[..., var] if not tape else w[var]
        for e in chain:  # top tree first
            other = e.b if var == e.a else e.a
            cop, p = _edge_copula(e, None if params is None else params.get(e.key))
            if cop is INDEPENDENCE:
                continue
            partner = pseudo[(other, e.conditioning)]
            x = cop.hinv_tape(x, partner, params=p) if tape else cop.hinv(x, partner)
        out[var] = x
        pseudo[(var, frozenset())] = x
        for e in reversed(chain):  # T_1 upward: refresh pseudo-observations
            other = e.b if var == e.a else e.a
            ua = pseudo[(var, e.conditioning)]
            ub = pseudo[(other, e.conditioning)]
            cop, p = _edge_copula(e, None if params is None else params.get(e.key))
            if cop is INDEPENDENCE:
                pseudo[(var, e.conditioning | {other})] = ua
                pseudo[(other, e.conditioning | {var})] = ub
            else:
                pseudo[(var, e.conditioning | {other})] = cop.h(ua, ub, params=p)
                pseudo[(other, e.conditioning | {var})] = cop.h(ub, ua, params=p)
    if tape:
        return out
    return np.stack(out, axis=-1)


def sample(v: VineStructure, size: int, random_state=None) -> np.ndarray:
    rng = np.random.default_rng(random_state)
    return inverse_rosenblatt(v, rng.random((size, v.n)))


def assign_copulas(v: VineStructure, u, families=ALL_FAMILIES) -> VineStructure:
    """Select and fit a pair copula for every non-truncated edge, tree by tree.

    Tree-1 edges use the columns of ``u``; higher trees use h-function
    pseudo-observations from the copulas fitted below.  Failures are
    collected and raised together.
    """
    u = np.clip(np.asarray(u, dtype=float), UMIN, UMAX)
    if u.ndim != 2 or u.shape[1] != v.n:
        raise ValueError(f"expected a (T, {v.n}) pseudo-observation matrix")
    pseudo = {(i, frozenset()): u[:, i] for i in range(v.n)}
    fitted = {}
    failures = []
    last = len(v.trees) - 1
    for j, tree in enumerate(v.trees):
        for e in tree:
            ua = pseudo[(e.a, e.conditioning)]
            ub = pseudo[(e.b, e.conditioning)]
            if e.truncated:
                cop = INDEPENDENCE
            else:
                try:
                    cop = select_family(ua, ub, families).copula
                except (SelectionError, ValueError) as exc:
                    failures.append(f"{e.key}: {exc}")
                    cop = INDEPENDENCE
                fitted[e.key] = cop
            if j < last:
                pseudo[(e.a, e.conditioning | {e.b})] = cop.h(ua, ub)
                pseudo[(e.b, e.conditioning | {e.a})] = cop.h(ub, ua)
    if failures:
        raise VineFitError(failures)
    from dataclasses import replace

    return v.replace_edges(lambda e: replace(e, copula=fitted[e.key]) if e.key in fitted else e)


def gaussian_vine(v: VineStructure) -> VineStructure:
    """Attach Gaussian copulas with the edges' partial correlations."""
    from dataclasses import replace

    return v.replace_edges(lambda e: replace(e, copula=PairCopula("gaussian", (e.partial_rho,))))
