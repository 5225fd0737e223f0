"""Bottom-to-top construction of weighted partial regular vines.

The vine is built from the last tree upwards.  An edge of tree ``T_j`` is
identified by its complete union ``U`` (``j + 1`` variables) and chooses a
conditioned pair ``{a, b}`` inside ``U``; its two m-children in ``T_{j-1}``
are then ``U - {b}`` and ``U - {a}``.  A level is admissible when the
children graph it induces is a spanning tree, which is exactly the
regular-vine condition for the tree one level up.

Trees at or below the inverse level ``l`` (``j >= l``) keep the weakest
partial correlations (minimum ``sum |rho|``); trees above it (``j < l``)
take the strongest (minimum ``sum log(1 - rho^2)``).  The bottom tree always
holds the globally weakest pair.
"""
from __future__ import annotations

import math
from itertools import combinations, product

import numpy as np

from ..depstats import CorrelationMatrix, PartialCorrelations, SingularityError
from .structure import VineEdge, VineStructure, VineStructureError


class VineDomainError(ValueError):
    """Weighted squared correlation reached 1 in the structure score."""


def _as_matrix(corr) -> np.ndarray:
    return corr.values if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)


def _weight(weights, a, b) -> float:
    if weights is None:
        return 1.0
    if isinstance(weights, dict):
        return float(weights.get(frozenset((a, b)), weights.get((a, b), weights.get((b, a), 1.0))))
    return float(np.asarray(weights)[a, b])


def _check_psd(mat):
    w = np.linalg.eigvalsh(mat)
    if w.min() < -1e-10:
        raise SingularityError(
            f"correlation matrix is indefinite (smallest eigenvalue {w.min():.3e}); "
            "partial correlations are not valid"
        )


def inverse_levels(n: int) -> list:
    """Admissible inverse indicators ``n-1, ..., ceil(n/2)``."""
    if n == 2:
        return [1]
    return list(range(n - 1, math.ceil(n / 2) - 1, -1))


def _cost(rho: float, strong: bool) -> float:
    if strong:
        return math.log(max(1.0 - rho * rho, 1e-300))
    return abs(rho)


class _LevelSearch:
    """Pair choices for one level whose children form a spanning tree.

    Two unions of a regular-vine level that share ``k - 1`` variables always
    share that intersection as a common child node (checked against brute
    enumeration in the tests).  Those shared children are therefore forced;
    each set only chooses freely among pairs compatible with them, the
    children graph is fixed by the forced part, and the level is either
    feasible for every compatible choice or for none.
    """

    def __init__(self, sets, options):
        self.sets = sets
        self.m = len(sets)
        k = len(sets[0])
        forced = [set() for _ in sets]
        for i, j in combinations(range(self.m), 2):
            inter = sets[i] & sets[j]
            if len(inter) == k - 1:
                forced[i].add(inter)
                forced[j].add(inter)
        self.options = []
        for U, F, opts in zip(sets, forced, options):
            keep = [(c, (a, b)) for c, (a, b) in opts if F <= {U - {b}, U - {a}}]
            self.options.append(keep)
        self.feasible = all(self.options) and self._tree_ok([o[0][1] for o in self.options])

    def _tree_ok(self, assignment):
        parent = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for U, (a, b) in zip(self.sets, assignment):
            ra, rb = find(U - {b}), find(U - {a})
            if ra == rb:
                return False
            parent[ra] = rb
        return len(parent) == self.m + 1

    def best(self):
        """Minimum-cost admissible assignment, or None."""
        if not self.feasible:
            return None
        return [opts[0][1] for opts in self.options]

    def all_feasible(self):
        """Every admissible assignment, cheapest per-set options first."""
        if not self.feasible:
            return
        for combo in product(*self.options):
            yield [pair for _, pair in combo]


def build_candidate_vine(corr, l: int, weights=None, labels=()) -> VineStructure:
    """Construct one weighted partial regular vine for inverse indicator ``l``."""
    mat = _as_matrix(corr)
    n = mat.shape[0]
    if n < 2:
        raise VineStructureError("need at least two variables")
    if not (l in inverse_levels(n)):
        raise ValueError(f"inverse indicator {l} outside [{math.ceil(n / 2)}, {n - 1}]")
    _check_psd(mat)
    pc = PartialCorrelations(mat)
    if not labels and isinstance(corr, CorrelationMatrix):
        labels = corr.labels

    full = frozenset(range(n))
    # levels[k] = list of (union, pair) for edges with |union| = k
    levels: dict = {}

    def options_for(U, strong):
        opts = []
        for a, b in combinations(sorted(U), 2):
            rho = pc(a, b, U - {a, b})
            opts.append((_cost(rho, strong), (a, b)))
        opts.sort(key=lambda t: (t[0], t[1]))
        return opts

    def descend(k, sets):
        # choose pairs for the complete unions of size k, then recurse down
        if k == 2:
            levels[2] = [(U, tuple(sorted(U))) for U in sets]
            return True
        strong = (k - 1) < l and k < n
        opts = [options_for(U, strong) for U in sets]
        search = _LevelSearch(sets, opts)
        first = search.best()
        tried = []
        candidates = ([first] if first is not None else [])
        for assignment in candidates:
            tried.append(tuple(assignment))
            if _try(k, sets, assignment):
                return True
        for assignment in search.all_feasible():
            if tuple(assignment) in tried:
                continue
            if _try(k, sets, assignment):
                return True
        return False

    def _try(k, sets, assignment):
        levels[k] = list(zip(sets, assignment))
        children = []
        for U, (a, b) in zip(sets, assignment):
            for c in (U - {b}, U - {a}):
                if c not in children:
                    children.append(c)
        children.sort(key=lambda s: tuple(sorted(s)))
        if descend(k - 1, children):
            return True
        del levels[k]
        return False

    if n == 2:
        levels[2] = [(full, (0, 1))]
    elif not descend(n, [full]):
        raise VineStructureError("no regular vine satisfies the construction constraints")

    trees = []
    for k in range(2, n + 1):
        tree = []
        for U, (a, b) in sorted(levels[k], key=lambda t: (t[1], tuple(sorted(t[0])))):
            cond = U - {a, b}
            tree.append(VineEdge(a, b, cond, pc(a, b, cond)))
        trees.append(tree)
    v = VineStructure(n=n, trees=trees, inverse_indicator=l, labels=tuple(labels))
    v.validate()
    return _with_score(v, weights)


def score_vine(v: VineStructure, weights=None) -> float:
    """Weighted determinant score ``R = -log prod (1 - W rho^2)``; larger is better."""
    total = 0.0
    for e in v.edges:
        x = _weight(weights, e.a, e.b) * e.partial_rho**2
        if x >= 1.0:
            raise VineDomainError(f"W * rho^2 = {x} >= 1 on edge {e.key}")
        if x < 0:
            raise VineDomainError(f"negative weight on edge {e.key}")
        total += math.log1p(-x)
    return -total


def _with_score(v, weights):
    from dataclasses import replace

    return replace(v, score=score_vine(v, weights))


def select_structure(corr, weights=None, labels=(), return_candidates=False):
    """Build one candidate per inverse level and keep the highest score.

    Scores within ``1e-9`` (relative) count as ties; ties go to the smaller
    ``l``, then to the lexicographically smaller edge list.
    """
    mat = _as_matrix(corr)
    n = mat.shape[0]
    cands = [build_candidate_vine(corr, l, weights, labels) for l in inverse_levels(n)]

    def key(v):
        return (v.inverse_indicator, [e.key for e in v.edges])

    best = None
    for v in sorted(cands, key=key):
        if best is None or v.score > best.score + 1e-9 * max(1.0, abs(best.score)):
            best = v
    if return_candidates:
        return best, cands
    return best
