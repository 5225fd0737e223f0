import math
from itertools import combinations, permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpvc.depstats import (
    CorrelationMatrix,
    PartialCorrelations,
    SingularityError,
    UndefinedStatisticError,
    estimate_pairwise,
    kendall_tau,
    partial_correlation,
    partial_correlation_precision,
    pit_transform,
    tau_to_rho,
)


def brute_tau(x, y):
    c = d = 0
    for i, j in combinations(range(len(x)), 2):
        s = np.sign(x[i] - x[j]) * np.sign(y[i] - y[j])
        c += s > 0
        d += s < 0
    return (c - d) / (len(x) * (len(x) - 1) / 2)


def random_corr(rng, n):
    A = rng.normal(size=(n, n + 2))
    S = A @ A.T
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4], [2, 4, 6, 8]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [8, 6, 4, 2]) == -1.0
    assert kendall_tau([1, 3, 2, 4], [1, 2, 3, 4]) == pytest.approx(2 / 3, abs=1e-15)
    assert brute_tau([1, 3, 2, 4], [1, 2, 3, 4]) == pytest.approx(2 / 3)


def test_kendall_errors():
    with pytest.raises(UndefinedStatisticError):
        kendall_tau([1], [2])
    with pytest.raises(UndefinedStatisticError):
        kendall_tau([1, 1, 1], [1, 2, 3])


def test_kendall_matches_brute_force_without_ties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.normal(size=15), rng.normal(size=15)
        assert kendall_tau(x, y) == pytest.approx(brute_tau(x, y), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=3, max_size=30))
def test_kendall_symmetries(pairs):
    x = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return
    t = kendall_tau(x, y)
    assert -1 <= t <= 1
    assert kendall_tau(y, x) == pytest.approx(t, abs=1e-12)
    assert kendall_tau(x, -y) == pytest.approx(-t, abs=1e-12)
    # strictly increasing transform
    assert kendall_tau(np.exp(x / 10), y**3) == pytest.approx(t, abs=1e-12)


def test_partial_correlation_examples():
    m = np.full((3, 3), 0.5)
    np.fill_diagonal(m, 1.0)
    assert partial_correlation(m, 0, 1) == 0.5
    assert partial_correlation(m, 0, 1, {2}) == pytest.approx(1 / 3, abs=1e-15)
    assert partial_correlation_precision(m, 0, 1, {2}) == pytest.approx(1 / 3, abs=1e-12)
    z = np.array([[1, 0.4, 0], [0.4, 1, 0], [0, 0, 1.0]])
    assert partial_correlation(z, 0, 1, {2}) == pytest.approx(0.4, abs=1e-15)


def test_partial_correlation_singular():
    m = np.array([[1, 1.0, 0.5], [1.0, 1, 0.5], [0.5, 0.5, 1]])
    with pytest.raises(SingularityError, match=r"\(0, 1\)|\(1, 0\)"):
        partial_correlation(m, 0, 2, {1})


def test_partial_correlation_preconditions():
    m = np.eye(3)
    with pytest.raises(ValueError):
        partial_correlation(m, 0, 0)
    with pytest.raises(ValueError):
        partial_correlation(m, 0, 1, {0})
    with pytest.raises(IndexError):
        partial_correlation(m, 0, 5)


def test_partial_correlation_order_invariance():
    rng = np.random.default_rng(3)
    for n in range(3, 9):
        m = random_corr(rng, n)
        cond = list(range(2, n))
        ref = partial_correlation_precision(m, 0, 1, cond)
        for perm in list(permutations(cond))[:6]:
            # eliminate in a different order by relabelling variables
            order = [0, 1, *perm]
            mm = m[np.ix_(order, order)]
            got = partial_correlation(mm, 0, 1, range(2, n))
            assert abs(got - ref) <= 1e-10
        assert partial_correlation(m, 1, 0, cond) == partial_correlation(m, 0, 1, cond)


def test_pit_examples():
    np.testing.assert_allclose(pit_transform([10, 20, 30]), [0.25, 0.5, 0.75])
    np.testing.assert_allclose(pit_transform([5, 5]), [0.5, 0.5])
    np.testing.assert_allclose(pit_transform([3, 1, 2, 4]), [0.6, 0.2, 0.4, 0.8])
    with pytest.raises(UndefinedStatisticError):
        pit_transform([[1.0]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=40))
def test_pit_properties(col):
    x = np.array(col, dtype=float)
    u = pit_transform(x)
    assert np.all((u > 0) & (u < 1))
    np.testing.assert_allclose(pit_transform(np.arctan(x / 100) * 3 + 7), u)


def test_estimate_pairwise_independent():
    rng = np.random.default_rng(42)
    c = estimate_pairwise(rng.random((1000, 4)))
    off = c.values[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) <= 0.08)
    assert not c.repaired


def test_tau_to_rho():
    assert tau_to_rho(0.0) == 0.0
    assert tau_to_rho(0.5) == pytest.approx(0.70711, abs=1e-5)
    rng = np.random.default_rng(1)
    r = math.sin(math.pi / 4)
    z = rng.multivariate_normal([0, 0], [[1, r], [r, 1]], size=5000)
    assert kendall_tau(z[:, 0], z[:, 1]) == pytest.approx(0.5, abs=0.02)


def test_estimate_pairwise_constant_column():
    x = np.column_stack([np.arange(10.0), np.ones(10)])
    with pytest.raises(UndefinedStatisticError):
        estimate_pairwise(x)


def test_estimate_pairwise_indefinite_input_is_repaired():
    # x-y concordant, y-z concordant, x-z discordant: sin map gives an indefinite matrix
    x = np.array([1, 2, 3, 4, 5, 6.0])
    y = np.array([2, 1, 4, 3, 6, 5.0])
    z = -x + np.array([0, 0.1, 0, 0.1, 0, 0.1])
    m = np.array([[1, tau_to_rho(kendall_tau(x, y)), tau_to_rho(kendall_tau(x, z))],
                  [0, 1, tau_to_rho(kendall_tau(y, z))], [0, 0, 1]])
    m = np.triu(m) + np.triu(m, 1).T
    c = estimate_pairwise(np.column_stack([x, y, z]))
    assert c.is_psd()
    assert c.repaired == (np.linalg.eigvalsh(m).min() < 0)
    if c.repaired:
        assert c.diagnostics


def test_correlation_matrix_validation():
    with pytest.raises(ValueError):
        CorrelationMatrix([[1, 0.2], [0.3, 1]])
    with pytest.raises(ValueError):
        CorrelationMatrix([[2, 0], [0, 1]])
    c = CorrelationMatrix(np.eye(3))
    assert c.labels == (0, 1, 2) and c.n == 3


def test_partial_correlations_memo_consistent():
    rng = np.random.default_rng(9)
    m = random_corr(rng, 6)
    pc = PartialCorrelations(m)
    for i, j in combinations(range(6), 2):
        rest = [k for k in range(6) if k not in (i, j)]
        assert abs(pc(i, j, rest) - partial_correlation_precision(m, i, j, rest)) <= 1e-10
