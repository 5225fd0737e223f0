"""Forecast metrics, portfolio returns, Gaussian VaR and coverage backtests."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special, stats

LEVELS = (0.90, 0.95, 0.99)
CRITICAL_DF1 = 3.841
CRITICAL_DF2 = 5.991


class ConfigError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    mape: float
    rae: float
    rse: float
    precision: float | None
    recall: float | None
    accuracy: float


@dataclass(frozen=True)
class VarSeries:
    level: float
    threshold: np.ndarray
    indicators: np.ndarray | None = None


@dataclass(frozen=True)
class CoverageResult:
    count: int
    rate: float
    lr_uc: float
    p_uc: float
    lr_it: float | None
    p_it: float | None
    lr_cc: float | None
    p_cc: float | None
    pass_uc: bool
    pass_it: bool | None
    pass_cc: bool | None
    diagnostics: tuple = ()


@dataclass
class BacktestReport:
    levels: dict = field(default_factory=dict)  # level -> CoverageResult
    metrics: MetricReport | None = None
    arr: float | None = None

    def to_dict(self):
        out = {"levels": {f"{k:.2f}": {kk: vv for kk, vv in asdict(v).items() if kk != "diagnostics"}
                          for k, v in sorted(self.levels.items())}}
        out["metrics"] = None if self.metrics is None else asdict(self.metrics)
        out["arr"] = self.arr
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    def table(self) -> str:
        """Plain-text summary laid out as POF / LR_UC / LR_IT / LR_CC blocks per level."""
        def num(x, fmt="{:.3f}"):
            return "-" if x is None else fmt.format(x)

        lines = [f"{'':8s}{'1-alpha':>9s}{'value':>12s}{'p-value':>12s}"]
        for name in ("POF", "LR_UC", "LR_IT", "LR_CC"):
            for lvl, r in sorted(self.levels.items(), reverse=True):
                if name == "POF":
                    a, b = str(r.count), f"{100 * r.rate:.2f}%"
                else:
                    key = name.lower()
                    a = num(getattr(r, key))
                    b = num(getattr(r, "p_" + key[3:]), "({:.3f})")
                lines.append(f"{name:8s}{100 * lvl:>8.0f}%{a:>12s}{b:>12s}")
        if self.metrics is not None:
            m = self.metrics
            lines.append(f"MAPE {m.mape:.4f}  RAE {m.rae:.4f}  RSE {m.rse:.4f}  "
                         f"precision {num(m.precision, '{:.4f}')}  recall {num(m.recall, '{:.4f}')}  "
                         f"accuracy {m.accuracy:.4f}")
        if self.arr is not None:
            lines.append(f"ARR {100 * self.arr:.2f}%")
        return "\n".join(lines) + "\n"


# -- accuracy metrics ----------------------------------------------------------------

def regression_metrics(actual, predicted):
    """``(MAPE, RAE, RRSE)``; zero actuals are left out of MAPE with a warning."""
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.size < 2:
        raise MetricError("actual and predicted need equal lengths of at least 2")
    dev = a - a.mean()
    if np.all(dev == 0):
        raise MetricError("actual series is constant; RAE and RSE are undefined")
    nz = a != 0
    if not nz.all():
        warnings.warn(f"{int((~nz).sum())} zero actual(s) excluded from MAPE", RuntimeWarning, stacklevel=2)
    err = a - p
    mape = float(np.mean(np.abs(err[nz]) / np.abs(a[nz]))) if nz.any() else math.nan
    rae = float(np.sum(np.abs(err)) / np.sum(np.abs(dev)))
    rse = float(math.sqrt(np.sum(err**2) / np.sum(dev**2)))
    return mape, rae, rse


def _as_up(x):
    x = np.asarray(x)
    if x.dtype.kind in "US":
        bad = ~np.isin(x, ["up", "down"])
        if bad.any():
            raise MetricError("direction labels must be 'up' or 'down'")
        return x == "up"
    return x.astype(bool)


def classification_metrics(actual, predicted):
    """``(precision, recall, accuracy)`` with "up" as the positive class.

    Precision (or recall) is ``None`` with a warning when its denominator is zero.
    """
    a, p = _as_up(actual), _as_up(predicted)
    if a.shape != p.shape or a.size == 0:
        raise MetricError("label sequences must be nonempty and of equal length")
    tp = int(np.sum(a & p))
    fp = int(np.sum(~a & p))
    fn = int(np.sum(a & ~p))
    precision = recall = None
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        warnings.warn("no positive predictions: precision undefined", RuntimeWarning, stacklevel=2)
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        warnings.warn("no positive actuals: recall undefined", RuntimeWarning, stacklevel=2)
    return precision, recall, float(np.mean(a == p))


def portfolio_return(returns, weights=None):
    """``gamma_p,t = sum_i w_i gamma_i,t``; equal weights by default."""
    R = np.asarray(returns, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    n = R.shape[1]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ConfigError(f"expected {n} weights")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ConfigError(f"portfolio weights sum to {w.sum()!r}, not 1")
    return R @ w


def arr(returns, periods, compound=False):
    """Annualized return ``sum_t gamma_t / periods`` (or compounded when ``compound``)."""
    g = np.asarray(returns, dtype=float)
    if g.size == 0:
        raise MetricError("empty return series")
    if not periods > 0:
        raise ConfigError("periods must be positive")
    if compound:
        return float(np.prod(1.0 + g) ** (1.0 / periods) - 1.0)
    return float(np.sum(g) / periods)


def strategy_returns(actual, p_up, threshold=0.5):
    """Long on a predicted up-move, short otherwise."""
    pos = np.where(np.asarray(p_up) > threshold, 1.0, -1.0)
    return pos * np.asarray(actual, dtype=float)


# -- VaR and backtests --------------------------------------------------------------

def _check_level(level):
    if not 0.5 < level < 1.0:
        raise ConfigError(f"VaR level must lie in (0.5, 1), got {level}")


def var_forecast(mu, sigma, level=0.95) -> VarSeries:
    """Parametric Gaussian VaR threshold ``mu - z_level * sigma`` (a return, usually negative)."""
    _check_level(level)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    return VarSeries(level, mu - special.ndtri(level) * sigma)


def historical_var(returns, level=0.95, window=250) -> VarSeries:
    """Rolling empirical quantile of the previous ``window`` returns (nan until warm)."""
    _check_level(level)
    g = np.asarray(returns, dtype=float)
    th = np.full(g.shape, np.nan)
    for t in range(window, g.size):
        th[t] = np.quantile(g[t - window:t], 1.0 - level)
    return VarSeries(level, th)


def exceedances(returns, var: VarSeries):
    """Indicators ``I_t = 1[gamma_t < VaR_t]``, the count and the rate."""
    g = np.asarray(returns, dtype=float)
    if g.shape != var.threshold.shape:
        raise ValueError("returns and VaR thresholds are not aligned")
    ind = (g < var.threshold).astype(int)
    count = int(ind.sum())
    return VarSeries(var.level, var.threshold, ind), count, count / ind.size


def _xlogy(x, y):
    return 0.0 if x == 0 else x * math.log(y)


def _bern_ll(n0, n1, p):
    return _xlogy(n0, 1.0 - p) + _xlogy(n1, p)


def chi2_sf(x, df):
    return float(stats.chi2.sf(x, df))


def coverage_tests(indicators, level=0.95) -> CoverageResult:
    """Coverage likelihood ratios: unconditional coverage and first-order Markov independence, plus their sum."""
    _check_level(level)
    I = np.asarray(indicators).astype(int)
    if I.ndim != 1 or I.size < 2:
        raise ValueError("need at least two indicators")
    if not np.isin(I, (0, 1)).all():
        raise ValueError("indicators must be 0 or 1")
    T = I.size
    x = int(I.sum())
    alpha = 1.0 - level
    pi = x / T
    lr_uc = max(0.0, -2.0 * (_bern_ll(T - x, x, alpha) - _bern_ll(T - x, x, pi)))
    prev, nxt = I[:-1], I[1:]
    n00 = int(np.sum((prev == 0) & (nxt == 0)))
    n01 = int(np.sum((prev == 0) & (nxt == 1)))
    n10 = int(np.sum((prev == 1) & (nxt == 0)))
    n11 = int(np.sum((prev == 1) & (nxt == 1)))
    notes = []
    if n00 + n01 == 0 or n10 + n11 == 0:
        notes.append("independence test undefined: a transition state never occurs")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
        lr_it = lr_cc = p_it = p_cc = None
        pass_it = pass_cc = None
    else:
        pi01 = n01 / (n00 + n01)
        pi11 = n11 / (n10 + n11)
        pi2 = (n01 + n11) / (n00 + n01 + n10 + n11)
        l_null = _bern_ll(n00 + n10, n01 + n11, pi2)
        l_alt = _bern_ll(n00, n01, pi01) + _bern_ll(n10, n11, pi11)
        lr_it = max(0.0, -2.0 * (l_null - l_alt))
        lr_cc = lr_uc + lr_it
        p_it, p_cc = chi2_sf(lr_it, 1), chi2_sf(lr_cc, 2)
        pass_it, pass_cc = lr_it < CRITICAL_DF1, lr_cc < CRITICAL_DF2
    return CoverageResult(x, x / T, lr_uc, chi2_sf(lr_uc, 1), lr_it, p_it, lr_cc, p_cc,
                          lr_uc < CRITICAL_DF1, pass_it, pass_cc, tuple(notes))


def backtest(actual, mu, sigma, levels=LEVELS) -> dict:
    """Coverage results per level for Gaussian VaR built from ``(mu, sigma)``."""
    out = {}
    for lvl in levels:
        vs, _, _ = exceedances(actual, var_forecast(mu, sigma, lvl))
        out[lvl] = coverage_tests(vs.indicators, lvl)
    return out
