"""Rank and correlation statistics feeding the copula layer."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


class UndefinedStatisticError(ValueError):
    """Statistic is undefined for the input (too short, constant, ...)."""


class SingularityError(ArithmeticError):
    """Partial-correlation recursion hit |rho| = 1 (zero denominator)."""


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric unit-diagonal correlation matrix with variable labels.

    ``repaired`` is set when :func:`estimate_pairwise` had to floor
    eigenvalues to restore positive semi-definiteness.
    """

    values: np.ndarray
    labels: tuple = ()
    repaired: bool = False
    diagnostics: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(v, v.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(v), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have a unit diagonal")
        if np.any(np.abs(v) > 1.0 + 1e-12):
            raise ValueError("correlation entries must lie in [-1, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(v.shape[0])))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, ij):
        return self.values[ij]

    def is_psd(self, tol=1e-10) -> bool:
        return bool(np.linalg.eigvalsh(self.values).min() >= -tol)


def kendall_tau(x, y) -> float:
    """Kendall's tau-b between two series (ties handled with the tau-b adjustment)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise UndefinedStatisticError("series must have equal lengths")
    if x.size < 2:
        raise UndefinedStatisticError("need at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedStatisticError("Kendall's tau is undefined for a constant series")
    return float(stats.kendalltau(x, y, variant="b").statistic)


def tau_to_rho(tau):
    """Map Kendall's tau to a Pearson-type correlation (elliptical relation)."""
    return np.sin(np.pi * np.asarray(tau) / 2.0)


def partial_correlation(corr, i: int, j: int, cond=()) -> float:
    """Partial correlation of ``i`` and ``j`` given ``cond``.

    Applies the classical recursion, removing one conditioning variable per
    level::

        rho_{ij;S+k} = (rho_{ij;S} - rho_{ik;S} rho_{jk;S})
                       / sqrt((1 - rho_{ik;S}^2) (1 - rho_{jk;S}^2))

    The eliminated variable is always the largest index in the conditioning
    set; the result does not depend on this choice for valid inputs.
    """
    mat = corr.values if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)
    n = mat.shape[0]
    cond = frozenset(int(c) for c in cond)
    if i == j:
        raise ValueError("i and j must differ")
    if i in cond or j in cond:
        raise ValueError("i and j must not be in the conditioning set")
    if not all(0 <= k < n for k in (i, j, *cond)):
        raise IndexError("variable index out of range")
    return PartialCorrelations(mat)(i, j, cond)


class PartialCorrelations:
    """Memoized partial-correlation recursion over one correlation matrix."""

    def __init__(self, corr):
        mat = corr.values if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)
        self.mat = np.array(mat, dtype=float)
        self._cache: dict = {}

    def __call__(self, i: int, j: int, cond=frozenset()) -> float:
        if i > j:
            i, j = j, i
        cond = frozenset(cond)
        key = (i, j, cond)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not cond:
            r = float(self.mat[i, j])
        else:
            k = max(cond)
            rest = cond - {k}
            r_ij = self(i, j, rest)
            r_ik = self(i, k, rest)
            r_jk = self(j, k, rest)
            d = (1.0 - r_ik * r_ik) * (1.0 - r_jk * r_jk)
            if d <= 0.0:
                bad = (i, k) if abs(r_ik) >= 1.0 else (j, k)
                raise SingularityError(
                    f"|rho| = 1 for pair {bad} given {sorted(rest)}; recursion denominator is zero"
                )
            r = (r_ij - r_ik * r_jk) / math.sqrt(d)
        self._cache[key] = r
        return r


def partial_correlation_precision(corr, i: int, j: int, cond=()) -> float:
    """Partial correlation via the inverse of the sub-correlation matrix.

    Independent of the recursion: ``-P_ij / sqrt(P_ii P_jj)`` with ``P`` the
    precision matrix of the variables ``{i, j} + cond``.
    """
    mat = corr.values if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)
    idx = [i, j, *sorted(cond)]
    prec = np.linalg.inv(mat[np.ix_(idx, idx)])
    return float(-prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1]))


def pit_transform(samples) -> np.ndarray:
    """Rank-based probability integral transform, ``rank / (T + 1)`` per column."""
    x = np.asarray(samples, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] < 2:
        raise UndefinedStatisticError("need at least two rows")
    u = stats.rankdata(x, method="average", axis=0) / (x.shape[0] + 1.0)
    return u[:, 0] if squeeze else u


def estimate_pairwise(data, labels=None, floor=1e-10) -> CorrelationMatrix:
    """Pairwise correlation matrix from Kendall's tau via ``sin(pi tau / 2)``.

    An indefinite result is repaired by flooring eigenvalues at ``floor``
    and rescaling to a unit diagonal; the returned matrix is then flagged
    ``repaired``.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise UndefinedStatisticError("need a (T >= 2, n) sample matrix")
    n = x.shape[1]
    rho = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            rho[a, b] = rho[b, a] = tau_to_rho(kendall_tau(x[:, a], x[:, b]))
    repaired = False
    notes = []
    w, v = np.linalg.eigh(rho)
    if w.min() < floor:
        repaired = True
        notes.append(f"eigenvalues floored at {floor} (min was {w.min():.3e})")
        warnings.warn("pairwise correlation matrix was not PSD; eigenvalues floored", RuntimeWarning)
        rho = (v * np.maximum(w, floor)) @ v.T
        d = np.sqrt(np.diag(rho))
        rho = rho / np.outer(d, d)
        rho = 0.5 * (rho + rho.T)
        np.fill_diagonal(rho, 1.0)
    return CorrelationMatrix(rho, tuple(labels) if labels is not None else (), repaired, tuple(notes))
