import math
from itertools import combinations, product

import numpy as np
import pytest
from scipy import special, stats

from vine_oracles import enumerate_vines
from wpvc.depstats import SingularityError, partial_correlation_precision
from wpvc.paircopula import CopulaFamily, PairCopula
from wpvc.vine import (
    VineDomainError,
    VineEdge,
    VineStructure,
    VineStructureError,
    WeightedPartialVine,
    assign_copulas,
    build_candidate_vine,
    dumps,
    gaussian_vine,
    inverse_levels,
    inverse_rosenblatt,
    loads,
    read,
    sample,
    score_vine,
    select_structure,
    truncate,
    vine_log_density,
    write,
)
from wpvc.vine.build import _LevelSearch, _cost


def random_corr(rng, n):
    A = rng.normal(size=(n, n + 1))
    S = A @ A.T
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


def gaussian_copula_logpdf(u, R):
    z = special.ndtri(u)
    return stats.multivariate_normal(np.zeros(len(R)), R).logpdf(z) - stats.norm.logpdf(z).sum(axis=-1)


def check_structure(v):
    n = v.n
    assert len(v.trees) == n - 1
    assert v.n_edges == n * (n - 1) // 2
    for j, tree in enumerate(v.trees, start=1):
        assert len(tree) == n - j
        for e in tree:
            if j > 1:
                left, right = v.m_children(e)
                assert len(left.union ^ right.union) == 2
                assert left.union | right.union == e.union
                assert left.union & right.union == e.conditioning
    pairs = [e.conditioned for e in v.edges]
    assert len(set(pairs)) == len(pairs) == n * (n - 1) // 2
    v.validate()


# -- construction ---------------------------------------------------------------------

def test_n2_single_edge():
    v = build_candidate_vine(np.array([[1, 0.3], [0.3, 1]]), 1)
    assert len(v.trees) == 1 and v.edges[0].conditioned == {0, 1}
    assert v.edges[0].conditioning == frozenset()
    best, cands = select_structure(np.array([[1, 0.3], [0.3, 1]]), return_candidates=True)
    assert len(cands) == 1


def test_n3_weakest_pair_at_bottom():
    # the printed example matrix (rho23 = 0.1) is indefinite; 0.7 keeps the same ordering intent
    with pytest.raises(SingularityError):
        build_candidate_vine(np.array([[1, 0.9, 0.8], [0.9, 1, 0.1], [0.8, 0.1, 1]]), 2)
    m = np.array([[1, 0.9, 0.8], [0.9, 1, 0.7], [0.8, 0.7, 1]])
    v = build_candidate_vine(m, 2)
    bottom = v.trees[-1][0]
    assert bottom.conditioned == {1, 2} and bottom.conditioning == {0}
    # exhaustive: the three 3-dim vines differ only in the bottom pair
    weakest = min(enumerate_vines(3), key=lambda t: abs(partial_correlation_precision(
        m, t[1][0].a, t[1][0].b, t[1][0].conditioning)))
    assert weakest[1][0].key == bottom.key


def test_n6_counts():
    m = random_corr(np.random.default_rng(6), 6)
    best, cands = select_structure(m, return_candidates=True)
    assert len(best.trees) == 5
    assert best.n_nodes == 20
    assert best.n_edges == 15
    assert sorted(c.inverse_indicator for c in cands) == [3, 4, 5]


@pytest.mark.parametrize("n", range(2, 9))
def test_structural_suite(n):
    rng = np.random.default_rng(n)
    for _ in range(3):
        m = random_corr(rng, n)
        for l in inverse_levels(n):
            check_structure(build_candidate_vine(m, l))


def test_invalid_inputs():
    with pytest.raises(VineStructureError):
        build_candidate_vine(np.eye(1), 1)
    with pytest.raises(ValueError):
        build_candidate_vine(np.eye(5), 2)
    assert inverse_levels(5) == [4, 3]
    assert inverse_levels(6) == [5, 4, 3]


def test_enumeration_counts():
    assert [sum(1 for _ in enumerate_vines(n)) for n in (3, 4, 5)] == [3, 24, 480]


def _cost_vector(trees, m, n, l):
    out = []
    for j in range(n - 1, 0, -1):
        strong = j < l and j + 1 < n
        out.append(round(sum(_cost(partial_correlation_precision(m, e.a, e.b, e.conditioning), strong)
                             for e in trees[j - 1]), 10))
    return tuple(out)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_builder_is_lexicographic_optimum(n):
    # bottom tree first: each level is the cheapest one compatible with the levels below it
    rng = np.random.default_rng(100 + n)
    vines = list(enumerate_vines(n))
    for _ in range(4):
        m = random_corr(rng, n)
        for l in inverse_levels(n):
            v = build_candidate_vine(m, l)
            assert _cost_vector(v.trees, m, n, l) == min(_cost_vector(t, m, n, l) for t in vines)


@pytest.mark.parametrize("n", [4, 5])
def test_level_search_matches_generic_search(n):
    # every level of every regular vine: the shortcut search finds exactly the
    # assignments a generic union-find check accepts
    seen = set()
    for trees in enumerate_vines(n):
        for tree in trees[1:]:
            sets = sorted({e.union for e in tree}, key=lambda s: tuple(sorted(s)))
            key = tuple(map(frozenset, sets))
            if key in seen:
                continue
            seen.add(key)
            opts = [[(0.0, p) for p in combinations(sorted(U), 2)] for U in sets]
            search = _LevelSearch(sets, opts)
            fast = {tuple(a) for a in search.all_feasible()}
            slow = {tuple(a) for a in product(*[[p for _, p in o] for o in opts]) if search._tree_ok(a)}
            assert fast == slow and fast


def test_select_structure_scores():
    rng = np.random.default_rng(44)
    m = random_corr(rng, 4)
    best, cands = select_structure(m, return_candidates=True)
    assert all(best.score >= c.score for c in cands)
    assert best.score == max(c.score for c in cands)


def test_select_structure_gap_against_all_vines():
    # the l-indexed candidates are a subset; report how far the winner is from the best regular vine.
    # With unit weights prod(1 - rho^2) is det(corr) for every regular vine, so the gap is ~0.
    rng = np.random.default_rng(45)
    gaps = []
    for _ in range(10):
        m = random_corr(rng, 4)
        best = select_structure(m)
        top = max(-sum(math.log1p(-partial_correlation_precision(m, e.a, e.b, e.conditioning) ** 2)
                       for t in trees for e in t) for trees in enumerate_vines(4))
        assert best.score <= top + 1e-9
        gaps.append(top - best.score)
    print(f"max R gap to exhaustive optimum (n=4, 10 draws): {max(gaps):.4g}")


def test_weighted_selection_gap_reported():
    rng = np.random.default_rng(46)
    gaps = []
    for _ in range(10):
        m = random_corr(rng, 4)
        W = rng.uniform(0.2, 1.0, size=(4, 4))
        W = (W + W.T) / 2
        best = select_structure(m, W)
        top = max(-sum(math.log1p(-W[e.a, e.b] * partial_correlation_precision(m, e.a, e.b, e.conditioning) ** 2)
                       for t in trees for e in t) for trees in enumerate_vines(4))
        assert best.score <= top + 1e-9
        gaps.append(top - best.score)
    print(f"weighted R gap to exhaustive optimum (n=4, 10 draws): max {max(gaps):.4g}, mean {np.mean(gaps):.4g}")


def test_tie_break_deterministic():
    m = np.full((5, 5), 0.3)
    np.fill_diagonal(m, 1.0)
    a = select_structure(m)
    b = select_structure(m)
    assert dumps(a) == dumps(b)
    # unit weights make every candidate tie on R; the smaller l wins
    assert a.inverse_indicator == min(inverse_levels(5))


# -- score ---------------------------------------------------------------------------

def _one_edge(rho):
    return VineStructure(2, [[VineEdge(0, 1, (), rho)]])


def test_score_examples():
    assert score_vine(_one_edge(0.0)) == 0.0
    assert score_vine(_one_edge(0.5)) == pytest.approx(-math.log(0.75), abs=1e-12)
    assert score_vine(_one_edge(0.5), {(0, 1): 0.8}) > score_vine(_one_edge(0.5), {(0, 1): 0.4})
    with pytest.raises(VineDomainError):
        score_vine(_one_edge(0.8), {(0, 1): 2.0})


# -- truncation ----------------------------------------------------------------------

def test_truncation_examples():
    m = random_corr(np.random.default_rng(7), 4)
    v = build_candidate_vine(m, 3)
    assert truncate(v, 0.0).n_truncated == 0
    assert truncate(v, 1.0).n_truncated == v.n_edges
    g = gaussian_vine(truncate(v, 1.0))
    u = np.random.default_rng(0).random((20, 4))
    assert np.all(vine_log_density(g, u) == 0.0)
    three = VineStructure(3, [[VineEdge(0, 1, (), 0.2), VineEdge(1, 2, (), 0.6)], [VineEdge(0, 2, {1}, 0.02)]])
    t = truncate(three, 0.05)
    assert [e.truncated for e in t.edges] == [False, False, True]
    assert t.trees == truncate(three, 0.05).trees


# -- density ---------------------------------------------------------------------------

def test_density_examples():
    v = gaussian_vine(_one_edge(0.5))
    assert vine_log_density(v, np.array([0.5, 0.5])) == pytest.approx(math.log(1 / math.sqrt(0.75)), abs=1e-12)
    ind = VineStructure(2, [[VineEdge(0, 1, (), 0.5, PairCopula("independence"))]])
    assert vine_log_density(ind, np.array([0.3, 0.9])) == 0.0


def test_density_matches_gaussian_copula():
    R = np.array([[1, 0.6, 0.3], [0.6, 1, -0.4], [0.3, -0.4, 1]])
    v = gaussian_vine(build_candidate_vine(R, 2))
    u = np.random.default_rng(3).uniform(0.01, 0.99, size=(100, 3))
    np.testing.assert_allclose(np.exp(vine_log_density(v, u)), np.exp(gaussian_copula_logpdf(u, R)), rtol=1e-6)


def test_density_integrates_to_one():
    qmc = stats.qmc.Sobol(3, seed=0).random(2**20)
    vines = [gaussian_vine(build_candidate_vine(np.array([[1, 0.5, 0.3], [0.5, 1, 0.2], [0.3, 0.2, 1]]), 2))]
    vines.append(vines[0].replace_edges(lambda e: VineEdge(e.a, e.b, e.conditioning, e.partial_rho,
                                                           PairCopula("clayton", (1.0 + len(e.conditioning),)))))
    for v in vines:
        assert abs(np.mean(np.exp(vine_log_density(v, qmc))) - 1.0) <= 2e-2


def test_boundary_clamped_with_warning():
    v = gaussian_vine(_one_edge(0.5))
    with pytest.warns(RuntimeWarning):
        out = vine_log_density(v, np.array([0.0, 1.0]))
    assert np.isfinite(out)


def test_truncation_bound_and_parameter_count():
    rng = np.random.default_rng(8)
    Z = rng.multivariate_normal(np.zeros(4), random_corr(rng, 4), size=1500)
    full = WeightedPartialVine(truncation=0.0, families=["gaussian"]).fit(Z).structure_
    cut = WeightedPartialVine(truncation=0.2, families=["gaussian"]).fit(Z).structure_
    assert cut.n_truncated > 0
    assert cut.n_parameters < full.n_parameters
    # same copulas, truncated flags only: the change is bounded by the dropped edges' sup |log c|
    same = truncate(full, 0.2)
    x = np.concatenate([[1e-12], np.linspace(1e-6, 1 - 1e-6, 801), [1 - 1e-12]])
    X, Y = np.meshgrid(x, x)
    bound = sum(np.abs(e.copula.log_density(X, Y)).max() for e in same.edges if e.truncated and e.copula)
    u = rng.uniform(0.01, 0.99, size=(500, 4))
    diff = np.abs(vine_log_density(full, u) - vine_log_density(same, u))
    assert diff.max() <= bound
    assert same.n_parameters < full.n_parameters


# -- copula assignment ----------------------------------------------------------------

def test_assign_all_truncated_noop():
    v = truncate(build_candidate_vine(np.eye(3), 2), 1.0)
    out = assign_copulas(v, np.random.default_rng(0).random((50, 3)))
    assert all(e.copula is None for e in out.edges)


def test_assign_n2_gaussian():
    s = PairCopula("gaussian", (0.6,)).sample(2000, random_state=9)
    v = assign_copulas(build_candidate_vine(np.array([[1, 0.6], [0.6, 1]]), 1), s, ["gaussian"])
    assert 0.55 <= v.edges[0].copula.params[0] <= 0.65


def test_assign_recovers_conditional_independence():
    tree1 = [VineEdge(0, 1, (), 0.7, PairCopula("gaussian", (0.7,))),
             VineEdge(1, 2, (), 0.5, PairCopula("gaussian", (0.5,)))]
    truth = VineStructure(3, [tree1, [VineEdge(0, 2, {1}, 0.0, PairCopula("independence"))]])
    u = sample(truth, 3000, random_state=10)
    fitted = assign_copulas(truth.replace_edges(lambda e: VineEdge(e.a, e.b, e.conditioning, e.partial_rho)), u)
    cond = fitted.trees[1][0].copula
    assert cond.family is CopulaFamily.INDEPENDENCE or abs(cond.tau()) <= 0.045


def test_sampling_reproduces_tree1_taus():
    from wpvc.depstats import kendall_tau

    R = np.array([[1, 0.6, 0.3], [0.6, 1, 0.2], [0.3, 0.2, 1]])
    v = gaussian_vine(build_candidate_vine(R, 2))
    u = sample(v, 5000, random_state=11)
    for e in v.trees[0]:
        assert abs(kendall_tau(u[:, e.a], u[:, e.b]) - e.copula.tau()) <= 0.05


def test_inverse_rosenblatt_independence_identity():
    v = truncate(build_candidate_vine(np.eye(4), 3), 1.0)
    w = np.random.default_rng(0).random((10, 4))
    np.testing.assert_array_equal(inverse_rosenblatt(v, w), w)


# -- serialization -----------------------------------------------------------------------

def test_round_trip_lossless(tmp_path):
    rng = np.random.default_rng(12)
    Z = rng.multivariate_normal(np.zeros(4), random_corr(rng, 4), size=800)
    v = WeightedPartialVine(truncation=0.05).fit(Z).structure_
    path = tmp_path / "vine.txt"
    write(v, path)
    back = read(path)
    assert back == v
    for a, b in zip(v.edges, back.edges):
        if a.copula is not None:
            assert a.copula.params == b.copula.params
    assert dumps(loads(dumps(v))) == dumps(v)


def test_loads_rejects_garbage():
    with pytest.raises(VineStructureError):
        loads("hello")


def test_estimator_api():
    rng = np.random.default_rng(13)
    Z = rng.multivariate_normal(np.zeros(3), [[1, 0.5, 0.2], [0.5, 1, 0.1], [0.2, 0.1, 1]], size=600)
    est = WeightedPartialVine()
    assert est.get_params()["truncation"] == 0.05
    est.fit(Z)
    assert est.score(Z) > 0
    assert est.sample(5, random_state=0).shape == (5, 3)
