"""Bivariate copula catalog: densities, h-functions, fitting and selection.

All six families are exchangeable.  ``h(u, v)`` is the conditional
distribution ``P(U <= u | V = v) = dC(u, v)/dv``.  Density and h-function
formulas are written against :mod:`wpvc._ops`, so they evaluate on float
arrays as well as on tape variables (parameters and/or arguments).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate, optimize, special

from . import _ops as ops
from . import diffcore as dc
from .depstats import kendall_tau

UMIN = 1e-12
UMAX = 1.0 - 1e-12


class ParameterDomainError(ValueError):
    pass


class TauRangeError(ValueError):
    pass


class SelectionError(RuntimeError):
    def __init__(self, failures: dict):
        self.failures = failures
        detail = "; ".join(f"{k}: {v}" for k, v in failures.items())
        super().__init__(f"no candidate family could be fitted ({detail})")


class CopulaFamily(str, Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"
    STUDENT = "student"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"

    @property
    def n_params(self) -> int:
        return _NPARAMS[self]

    @classmethod
    def parse(cls, name) -> "CopulaFamily":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"t": "student", "studentt": "student", "student_t": "student", "indep": "independence"}
        return cls(aliases.get(key, key))


F = CopulaFamily
ALL_FAMILIES = tuple(F)

_NPARAMS = {F.INDEPENDENCE: 0, F.GAUSSIAN: 1, F.STUDENT: 2, F.CLAYTON: 1, F.GUMBEL: 1, F.FRANK: 1}

# optimisation boxes; the admissible domain itself is checked in _check_domain
_BOUNDS = {
    F.GAUSSIAN: [(-0.999, 0.999)],
    F.STUDENT: [(-0.999, 0.999), (2.1, 100.0)],
    F.CLAYTON: [(1e-4, 40.0)],
    F.GUMBEL: [(1.0, 40.0)],
    F.FRANK: [(-60.0, 60.0)],
}
DEFAULT_NU = 5.0


def _check_domain(family: CopulaFamily, params):
    p = [float(dc.value_of(x)) for x in params]
    if len(p) != family.n_params:
        raise ParameterDomainError(f"{family.value} takes {family.n_params} parameters, got {len(p)}")
    ok = {
        F.INDEPENDENCE: lambda: True,
        F.GAUSSIAN: lambda: -1 < p[0] < 1,
        F.STUDENT: lambda: -1 < p[0] < 1 and p[1] > 2,
        F.CLAYTON: lambda: p[0] > 0,
        F.GUMBEL: lambda: p[0] >= 1,
        F.FRANK: lambda: p[0] != 0 and math.isfinite(p[0]),
    }[family]()
    if not ok:
        raise ParameterDomainError(f"parameters {p} outside the {family.value} domain")


# -- family formulas ---------------------------------------------------------

def _logc_gaussian(p, u, v):
    r = p[0]
    x, y = ops.norm_ppf(u), ops.norm_ppf(v)
    om = 1.0 - r * r
    return -0.5 * ops.log(om) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * om)


def _h_gaussian(p, u, v):
    r = p[0]
    x, y = ops.norm_ppf(u), ops.norm_ppf(v)
    return ops.norm_cdf((x - r * y) / ops.sqrt(1.0 - r * r))


def _hinv_gaussian(p, w, v):
    r = p[0]
    return ops.norm_cdf(ops.norm_ppf(w) * math.sqrt(1.0 - r * r) + r * ops.norm_ppf(v))


def _logc_student(p, u, v):
    r, nu = p
    x, y = ops.t_ppf(u, nu), ops.t_ppf(v, nu)
    om = 1.0 - r * r
    q = (x * x + y * y - 2.0 * r * x * y) / (nu * om)
    return (
        ops.lgamma((nu + 2.0) / 2.0)
        + ops.lgamma(nu / 2.0)
        - 2.0 * ops.lgamma((nu + 1.0) / 2.0)
        - 0.5 * ops.log(om)
        - (nu + 2.0) / 2.0 * ops.log1p(q)
        + (nu + 1.0) / 2.0 * (ops.log1p(x * x / nu) + ops.log1p(y * y / nu))
    )


def _h_student(p, u, v):
    r, nu = p
    x, y = ops.t_ppf(u, nu), ops.t_ppf(v, nu)
    scale = ops.sqrt((nu + y * y) * (1.0 - r * r) / (nu + 1.0))
    return ops.t_cdf((x - r * y) / scale, nu + 1.0)


def _hinv_student(p, w, v):
    r, nu = p
    y = ops.t_ppf(v, nu)
    scale = np.sqrt((nu + y * y) * (1.0 - r * r) / (nu + 1.0))
    return ops.t_cdf(ops.t_ppf(w, nu + 1.0) * scale + r * y, nu)


def _logc_clayton(p, u, v):
    th = p[0]
    lu, lv = ops.log(u), ops.log(v)
    s = ops.exp(-th * lu) + ops.exp(-th * lv) - 1.0
    return ops.log1p(th) - (1.0 + th) * (lu + lv) - (1.0 / th + 2.0) * ops.log(s)


def _h_clayton(p, u, v):
    th = p[0]
    lu, lv = ops.log(u), ops.log(v)
    s = ops.exp(-th * lu) + ops.exp(-th * lv) - 1.0
    return ops.exp((-th - 1.0) * lv + (-1.0 / th - 1.0) * ops.log(s))


def _hinv_clayton(p, w, v):
    th = p[0]
    a = np.exp(-th / (th + 1.0) * (np.log(w) + (th + 1.0) * np.log(v)))
    return np.exp(-np.log(a + 1.0 - np.exp(-th * np.log(v))) / th)


def _cdf_clayton(p, u, v):
    th = p[0]
    return np.maximum(u ** (-th) + v ** (-th) - 1.0, 0.0) ** (-1.0 / th)


def _gumbel_parts(th, u, v):
    x, y = -ops.log(u), -ops.log(v)
    lx, ly = ops.log(x), ops.log(y)
    s = ops.exp(th * lx) + ops.exp(th * ly)
    return x, y, lx, ly, s


def _logc_gumbel(p, u, v):
    th = p[0]
    x, y, lx, ly, s = _gumbel_parts(th, u, v)
    ls = ops.log(s)
    a = ops.exp(ls / th)
    return (-a + x + y + (th - 1.0) * (lx + ly) + (2.0 / th - 2.0) * ls
            + ops.log1p((th - 1.0) * ops.exp(-ls / th)))


def _h_gumbel(p, u, v):
    th = p[0]
    x, y, lx, ly, s = _gumbel_parts(th, u, v)
    ls = ops.log(s)
    return ops.exp(-ops.exp(ls / th) + (1.0 / th - 1.0) * ls + (th - 1.0) * ly + y)


def _cdf_gumbel(p, u, v):
    th = p[0]
    return np.exp(-(((-np.log(u)) ** th + (-np.log(v)) ** th) ** (1.0 / th)))


def _logc_frank(p, u, v):
    th = p[0]
    a = -ops.expm1(-th)
    d = a - ops.expm1(-th * u) * ops.expm1(-th * v)
    return ops.log(th * a) - th * (u + v) - 2.0 * ops.log(abs(d))


def _h_frank(p, u, v):
    th = p[0]
    eu, ev = ops.expm1(-th * u), ops.expm1(-th * v)
    return (ev + 1.0) * eu / (ops.expm1(-th) + eu * ev)


def _hinv_frank(p, w, v):
    th = p[0]
    ev = np.exp(-th * v)
    return -np.log1p(w * np.expm1(-th) / (w + (1.0 - w) * ev)) / th


def _cdf_frank(p, u, v):
    th = p[0]
    return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)) / th


_LOGC = {F.GAUSSIAN: _logc_gaussian, F.STUDENT: _logc_student, F.CLAYTON: _logc_clayton,
         F.GUMBEL: _logc_gumbel, F.FRANK: _logc_frank}
_H = {F.GAUSSIAN: _h_gaussian, F.STUDENT: _h_student, F.CLAYTON: _h_clayton,
      F.GUMBEL: _h_gumbel, F.FRANK: _h_frank}
_HINV = {F.GAUSSIAN: _hinv_gaussian, F.STUDENT: _hinv_student, F.CLAYTON: _hinv_clayton,
         F.FRANK: _hinv_frank}
_CDF = {F.CLAYTON: _cdf_clayton, F.GUMBEL: _cdf_gumbel, F.FRANK: _cdf_frank}


def _debye1(x: float) -> float:
    if x == 0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / math.expm1(t) if t != 0 else 1.0, 0.0, x, epsabs=1e-14, epsrel=1e-13)
    return val / x


def frank_tau(theta: float) -> float:
    if abs(theta) < 1e-2:
        # series; the closed form cancels catastrophically near 0
        return theta / 9.0 - theta**3 / 900.0 + theta**5 / 52920.0
    return 1.0 - 4.0 / theta * (1.0 - _debye1(theta))


def _clip_uv(x):
    return ops.clip(x, UMIN, UMAX)


def _bisect_increasing(f, target, lo, hi, iters=80):
    """Vectorized bisection for increasing ``f`` on ``[lo, hi]``."""
    lo = np.full_like(target, lo, dtype=float)
    hi = np.full_like(target, hi, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = f(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# -- the copula object ---------------------------------------------------------

@dataclass(frozen=True)
class PairCopula:
    """One bivariate copula: family, parameter vector and the tau it was fitted to."""

    family: CopulaFamily
    params: tuple = ()
    fitted_tau: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        fam = CopulaFamily.parse(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))
        _check_domain(fam, self.params)

    def __repr__(self):
        return f"PairCopula({self.family.value}, params={self.params})"

    @property
    def n_params(self) -> int:
        return self.family.n_params

    def log_density(self, u, v, params=None):
        """Log copula density; ``params`` overrides (e.g. tape variables)."""
        p = self.params if params is None else params
        u, v = _clip_uv(u), _clip_uv(v)
        if self.family is F.INDEPENDENCE:
            return u * 0.0 + v * 0.0
        return _LOGC[self.family](p, u, v)

    def density(self, u, v):
        return np.exp(self.log_density(u, v))

    def h(self, u, v, params=None):
        """Conditional CDF of the first argument given the second."""
        p = self.params if params is None else params
        u, v = _clip_uv(u), _clip_uv(v)
        if self.family is F.INDEPENDENCE:
            return u + v * 0.0
        return _H[self.family](p, u, v)

    def hinv(self, w, v):
        """Inverse of :meth:`h` in its first argument (float arrays only)."""
        w = np.clip(np.asarray(w, dtype=float), UMIN, UMAX)
        v = np.clip(np.asarray(v, dtype=float), UMIN, UMAX)
        if self.family is F.INDEPENDENCE:
            return w + v * 0.0
        if self.family in _HINV:
            out = _HINV[self.family](self.params, w, v)
        else:
            ww, vv = np.broadcast_arrays(w, v)
            out = _bisect_increasing(lambda x: self.h(x, vv), ww, UMIN, UMAX)
        return np.clip(out, UMIN, UMAX)

    def hinv_tape(self, w, v, params=None):
        """:meth:`hinv` for scalar tape inputs via the implicit-function rule.

        With ``u = hinv(w | v)`` solving ``h(u | v) = w``::

            du/dw = 1 / c(u, v),  du/dv = -h_v / c,  du/dp = -h_p / c
        """
        p = list(self.params if params is None else params)
        wv, vv = float(dc.value_of(w)), float(dc.value_of(v))
        pv = [float(dc.value_of(x)) for x in p]
        cop = PairCopula(self.family, pv)
        u0 = float(cop.hinv(wv, vv))
        inner = dc.Tape()
        iu, iv = inner.var(u0), inner.var(vv)
        ip = [inner.var(x) for x in pv]
        hv = cop.h(iu, iv, params=ip)
        g = dc.grad(hv, [iu, iv, *ip])
        dens = max(g[0], 1e-300)
        partials = [1.0 / dens, -g[1] / dens, *(-gk / dens for gk in g[2:])]
        tape = next(x.tape for x in [w, v, *p] if isinstance(x, dc.Var))
        return dc.custom(tape, f"hinv_{self.family.value}", [w, v, *p], u0, partials)

    def cdf(self, u, v):
        """Copula CDF; closed form where available, else quadrature of ``h``."""
        u = np.clip(np.asarray(u, dtype=float), UMIN, UMAX)
        v = np.clip(np.asarray(v, dtype=float), UMIN, UMAX)
        if self.family is F.INDEPENDENCE:
            return u * v
        if self.family in _CDF:
            return _CDF[self.family](self.params, u, v)
        # C(u, v) = int_0^v h(u | s) ds
        fn = np.vectorize(lambda a, b: integrate.quad(lambda s: float(self.h(a, s)), 0.0, b,
                                                      epsabs=1e-13, epsrel=1e-12)[0])
        return fn(u, v)

    def tau(self) -> float:
        """Kendall's tau implied by the parameters."""
        f, p = self.family, self.params
        if f is F.INDEPENDENCE:
            return 0.0
        if f in (F.GAUSSIAN, F.STUDENT):
            return 2.0 / math.pi * math.asin(p[0])
        if f is F.CLAYTON:
            return p[0] / (p[0] + 2.0)
        if f is F.GUMBEL:
            return 1.0 - 1.0 / p[0]
        return frank_tau(p[0])

    def loglik(self, u, v) -> float:
        return float(np.sum(self.log_density(np.asarray(u, float), np.asarray(v, float))))

    def sample(self, n: int, random_state=None) -> np.ndarray:
        """Draw ``n`` pairs by conditional inversion."""
        rng = np.random.default_rng(random_state)
        v = rng.random(n)
        w = rng.random(n)
        return np.column_stack([self.hinv(w, v), v])


INDEPENDENCE = PairCopula(F.INDEPENDENCE)


def fit_tau_inversion(family, tau: float) -> PairCopula:
    """Moment-style fit from Kendall's tau.

    Zero tau for Clayton and Frank (whose independence limit is not an
    admissible parameter) maps to the independence copula.
    """
    family = CopulaFamily.parse(family)
    tau = float(tau)
    if not -1.0 < tau < 1.0:
        raise TauRangeError(f"tau={tau} outside (-1, 1)")
    if family is F.INDEPENDENCE:
        return PairCopula(F.INDEPENDENCE, (), tau)
    if family in (F.GAUSSIAN, F.STUDENT):
        rho = math.sin(math.pi * tau / 2.0)
        params = (rho,) if family is F.GAUSSIAN else (rho, DEFAULT_NU)
        return PairCopula(family, params, tau)
    if family in (F.CLAYTON, F.GUMBEL) and tau < 0:
        raise TauRangeError(f"{family.value} cannot attain negative tau ({tau})")
    if family is F.CLAYTON:
        if tau == 0:
            return PairCopula(F.INDEPENDENCE, (), tau)
        return PairCopula(family, (2.0 * tau / (1.0 - tau),), tau)
    if family is F.GUMBEL:
        return PairCopula(family, (1.0 / (1.0 - tau),), tau)
    if abs(tau) < 1e-4:
        # invert the small-theta series tau = theta/9 - theta^3/900
        theta = 9.0 * tau + 7.29 * tau**3
        if theta == 0:
            return PairCopula(F.INDEPENDENCE, (), tau)
        return PairCopula(family, (theta,), tau)
    lo, hi = (1e-10, 1.0) if tau > 0 else (-1.0, -1e-10)
    while frank_tau(hi) < tau:
        hi *= 2.0
    while frank_tau(lo) > tau:
        lo *= 2.0
    theta = optimize.bisect(lambda t: frank_tau(t) - tau, lo, hi, xtol=1e-10, rtol=1e-15, maxiter=500)
    return PairCopula(family, (theta,), tau)


@dataclass(frozen=True)
class FitResult:
    copula: PairCopula
    loglik: float
    converged: bool = True

    @property
    def aic(self) -> float:
        return 2.0 * self.copula.n_params - 2.0 * self.loglik


def fit_mle(family, u, v, init: PairCopula | None = None, maxiter: int = 200) -> FitResult:
    """Maximum-likelihood refinement of a pair copula.

    Starts from ``init`` (tau inversion when omitted) and never returns a
    worse log-likelihood than the start.  Non-convergence yields the best
    iterate with ``converged=False``.
    """
    family = CopulaFamily.parse(family)
    u = np.clip(np.asarray(u, dtype=float), UMIN, UMAX)
    v = np.clip(np.asarray(v, dtype=float), UMIN, UMAX)
    if u.size < 10:
        raise ValueError("need at least 10 observation pairs")
    tau = kendall_tau(u, v)
    if init is None:
        init = fit_tau_inversion(family, tau)
    if init.family is F.INDEPENDENCE or family is F.INDEPENDENCE:
        return FitResult(PairCopula(F.INDEPENDENCE, (), tau), 0.0, True)

    bounds = list(_BOUNDS[family])
    if family is F.FRANK:
        bounds = [(1e-4, 60.0)] if init.params[0] > 0 else [(-60.0, -1e-4)]
    x0 = np.clip(np.array(init.params), [b[0] for b in bounds], [b[1] for b in bounds])

    def nll(x):
        try:
            val = -np.sum(_LOGC[family](tuple(x), u, v))
        except (FloatingPointError, ValueError, ParameterDomainError):
            return 1e300
        return val if np.isfinite(val) else 1e300

    with np.errstate(all="ignore"):
        start = nll(x0)
        if family is F.STUDENT:
            x_best, f_best, ok = _fit_student_profile(u, v, bounds, maxiter)
        elif len(bounds) == 1:
            res = optimize.minimize_scalar(lambda t: nll([t]), bounds=bounds[0], method="bounded",
                                           options={"xatol": 1e-10, "maxiter": maxiter})
            x_best, f_best, ok = np.array([res.x]), res.fun, bool(res.success)
        else:
            res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds,
                                    options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-9})
            x_best, f_best, ok = res.x, res.fun, bool(res.success)
    if not f_best < start:
        x_best, f_best = x0, start
    return FitResult(PairCopula(family, tuple(x_best), tau), float(-f_best), ok)


def _student_nll_at(x, y, r, nu):
    om = 1.0 - r * r
    q = (x * x + y * y - 2.0 * r * x * y) / (nu * om)
    const = special.gammaln((nu + 2.0) / 2.0) + special.gammaln(nu / 2.0) - 2.0 * special.gammaln((nu + 1.0) / 2.0)
    ll = (const - 0.5 * np.log(om) - (nu + 2.0) / 2.0 * np.log1p(q)
          + (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))
    val = -np.sum(ll)
    return val if np.isfinite(val) else 1e300


def _fit_student_profile(u, v, bounds, maxiter):
    """Profile likelihood in ``log nu``: quantiles once per ``nu``, inner 1-d search in ``rho``."""
    (rlo, rhi), (nlo, nhi) = bounds

    def inner(log_nu):
        nu = math.exp(log_nu)
        x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
        res = optimize.minimize_scalar(lambda r: _student_nll_at(x, y, r, nu), bounds=(rlo, rhi),
                                       method="bounded", options={"xatol": 1e-10, "maxiter": maxiter})
        return res.fun, res.x, bool(res.success)

    outer = optimize.minimize_scalar(lambda ln: inner(ln)[0], bounds=(math.log(nlo), math.log(nhi)),
                                     method="bounded", options={"xatol": 1e-6, "maxiter": maxiter})
    f, r, ok = inner(outer.x)
    return np.array([r, math.exp(outer.x)]), f, ok and bool(outer.success)


def select_family(u, v, candidates=ALL_FAMILIES) -> FitResult:
    """Fit every candidate (tau inversion then MLE) and keep the minimum-AIC one."""
    cands = [CopulaFamily.parse(c) for c in candidates]
    if not cands:
        raise ValueError("candidate set is empty")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    best, failures = None, {}
    for fam in cands:
        try:
            if fam is F.INDEPENDENCE:
                res = FitResult(PairCopula(F.INDEPENDENCE, (), kendall_tau(u, v)), 0.0, True)
            else:
                res = fit_mle(fam, u, v)
                if res.copula.family is not fam and len(cands) > 1:
                    # tau exactly zero collapsed this family to independence
                    failures[fam.value] = "collapsed to independence"
                    continue
        except (TauRangeError, ParameterDomainError, ValueError) as exc:
            failures[fam.value] = str(exc)
            continue
        if best is None or res.aic < best.aic - 1e-12:
            best = res
    if best is None:
        raise SelectionError(failures)
    return best
