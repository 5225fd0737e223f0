"""Elementwise math that works on floats, float arrays and tape variables.

Formulas written against these helpers run vectorized on numpy arrays and,
unchanged, on :class:`~wpvc.diffcore.Var` scalars or object arrays of them.
"""
import numpy as np
from scipy import special

from . import diffcore as dc


def _is_tape(x):
    return isinstance(x, dc.Var) or (isinstance(x, np.ndarray) and x.dtype == object)


def _any_tape(*xs):
    return any(_is_tape(x) for x in xs)


def _map(fn, *xs):
    """Apply a scalar tape primitive elementwise (broadcasting object arrays)."""
    if all(not isinstance(x, np.ndarray) for x in xs):
        return fn(*xs)
    return np.vectorize(fn, otypes=[object])(*xs)


def _lift_tape(x, ref):
    if isinstance(x, dc.Var):
        return x
    return ref.tape.constant(float(x))


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, dc.Var):
            return x
        if isinstance(x, np.ndarray) and x.dtype == object:
            return x.flat[0]
    return None


def exp(x):
    return np.exp(x)


def log(x):
    return np.log(x)


def log1p(x):
    return np.log1p(x)


def expm1(x):
    return np.expm1(x)


def sqrt(x):
    return np.sqrt(x)


def tanh(x):
    return np.tanh(x)


def sigmoid(x):
    if _is_tape(x):
        return _map(lambda v: v.sigmoid(), x)
    return special.expit(x)


def pw(x, p):
    """``x ** p`` where either side may live on the tape."""
    if _is_tape(p):
        ref = _tape_of(p)
        return _map(lambda a, b: dc.power(_lift_tape(a, ref), b), x, p)
    return x**p


def norm_cdf(x):
    if _is_tape(x):
        return _map(dc.norm_cdf, x)
    return special.ndtr(x)


def norm_ppf(u):
    if _is_tape(u):
        ref = _tape_of(u)
        return _map(lambda a: dc.norm_ppf(_lift_tape(a, ref)), u)
    return special.ndtri(u)


def t_cdf(x, nu):
    if _any_tape(x, nu):
        ref = _tape_of(x, nu)
        return _map(lambda a, n: dc.t_cdf(_lift_tape(a, ref), n), x, nu)
    return special.stdtr(nu, x)


def t_ppf(u, nu):
    if _any_tape(u, nu):
        ref = _tape_of(u, nu)
        return _map(lambda a, n: dc.t_ppf(_lift_tape(a, ref), n), u, nu)
    return special.stdtrit(nu, u)


def lgamma(x):
    if _is_tape(x):
        return _map(dc.lgamma, x)
    return special.gammaln(x)


def clip(x, lo, hi):
    """Clamp forward values; on the tape a clamped entry becomes a constant."""
    if _is_tape(x):
        def one(v):
            if v.value < lo:
                v.tape.note(f"value {v.value!r} clamped to {lo}")
                return v.tape.constant(lo)
            if v.value > hi:
                v.tape.note(f"value {v.value!r} clamped to {hi}")
                return v.tape.constant(hi)
            return v
        return _map(one, x)
    return np.clip(x, lo, hi)
