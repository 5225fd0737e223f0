from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..depstats import estimate_pairwise, pit_transform
from ..paircopula import ALL_FAMILIES, CopulaFamily
from .build import select_structure
from .density import assign_copulas, sample, truncate, vine_log_density


class WeightedPartialVine(BaseEstimator):
    """Weighted partial regular vine copula estimator.

    Parameters
    ----------
    truncation : float, default=0.05
        Edges with ``|partial correlation|`` below this are replaced by the
        independence copula and not fitted.
    families : sequence of str, default=all six families
        Candidate pair-copula families for per-edge AIC selection.
    weights : dict or ndarray, optional
        Structure-score weights per conditioned pair (default 1).
    pseudo_obs : bool, default=True
        Rank-transform ``X`` before fitting.  Set to ``False`` when ``X``
        already holds uniforms in (0, 1).

    Attributes
    ----------
    structure_ : VineStructure
        Selected, truncated and fitted vine.
    correlation_ : CorrelationMatrix
    candidates_ : list of VineStructure
        One unfitted candidate per inverse indicator.
    timings_ : dict
        Seconds spent in structure selection and copula fitting.
    """

    def __init__(self, truncation=0.05, families=tuple(f.value for f in ALL_FAMILIES), weights=None,
                 pseudo_obs=True):
        self.truncation = truncation
        self.families = families
        self.weights = weights
        self.pseudo_obs = pseudo_obs

    def _uniforms(self, X):
        X = check_array(X, dtype=float, ensure_min_samples=2, ensure_min_features=2)
        if self.pseudo_obs:
            return pit_transform(X)
        if np.any((X <= 0) | (X >= 1)):
            raise ValueError("pseudo_obs=False requires X strictly inside (0, 1)")
        return X

    def fit(self, X, y=None):
        U = self._uniforms(X)
        self.n_features_in_ = U.shape[1]
        t0 = time.perf_counter()
        self.correlation_ = estimate_pairwise(U)
        best, cands = select_structure(self.correlation_, self.weights, return_candidates=True)
        self.candidates_ = cands
        t1 = time.perf_counter()
        fams = [CopulaFamily.parse(f) for f in self.families]
        self.structure_ = assign_copulas(truncate(best, self.truncation), U, fams)
        t2 = time.perf_counter()
        self.timings_ = {"structure": t1 - t0, "copulas": t2 - t1}
        return self

    def score_samples(self, X):
        """Vine copula log-density per row (``X`` on the fitting scale)."""
        check_is_fitted(self, "structure_")
        U = check_array(X, dtype=float)
        if self.pseudo_obs:
            U = pit_transform(U)
        return vine_log_density(self.structure_, U)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        """Uniform-margin draws from the fitted vine."""
        check_is_fitted(self, "structure_")
        return sample(self.structure_, n_samples, random_state)
