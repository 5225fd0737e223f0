"""Scalar reverse-mode differentiation.

A :class:`Tape` records every scalar operation together with the local
partial derivatives of its output with respect to its inputs.  A single
reverse sweep then accumulates adjoints for all nodes.

:class:`Var` overloads the arithmetic operators and exposes the elementary
functions as methods (``exp``, ``log``, ``tanh``, ...), so numpy object arrays
of ``Var`` work with ``np.exp``, ``np.tanh``, ``@`` and friends.  That lets
the same forward code run on float arrays and on tape variables.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy import special

EPS = 1e-12
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class StructuralError(ValueError):
    """Malformed tape operation (wrong arity, foreign variable, ...)."""


class Tape:
    """Append-only record of scalar operations.

    Attributes
    ----------
    ops : list of str
        Operation tag per node (``"leaf"`` and ``"const"`` for inputs).
    inputs : list of tuple of int
        Input node indices per node.
    partials : list of tuple of float
        Local derivative of the node w.r.t. each input.
    values : list of float
        Forward value per node.
    diagnostics : list of str
        Numerical guard events (argument clamps).
    """

    def __init__(self):
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.values: list[float] = []
        self.diagnostics: list[str] = []

    def __len__(self):
        return len(self.values)

    def _push(self, op, inputs, partials, value):
        self.ops.append(op)
        self.inputs.append(tuple(inputs))
        self.partials.append(tuple(float(p) for p in partials))
        self.values.append(float(value))
        return Var(self, len(self.values) - 1)

    def var(self, value) -> "Var":
        """New independent (differentiable) leaf."""
        return self._push("leaf", (), (), value)

    def constant(self, value) -> "Var":
        """New leaf whose gradient is always reported as 0."""
        return self._push("const", (), (), value)

    def variables(self, values) -> np.ndarray:
        """Object array of leaves shaped like ``values``."""
        arr = np.asarray(values, dtype=float)
        out = np.empty(arr.shape, dtype=object)
        for idx in np.ndindex(arr.shape):
            out[idx] = self.var(arr[idx])
        return out

    def note(self, message: str):
        self.diagnostics.append(message)


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape.values[self.index]

    def __repr__(self):
        return f"Var({self.value!r}, node={self.index})"

    def __float__(self):
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def _lift(self, other) -> "Var":
        if isinstance(other, np.ndarray) and other.ndim == 0:
            other = other.item()
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise StructuralError("operands belong to different tapes")
            return other
        return self.tape.constant(float(other))

    def __add__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        o = self._lift(other)
        return forward_op(self.tape, "add", [self, o], [1.0, 1.0])

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        o = self._lift(other)
        return forward_op(self.tape, "sub", [self, o], [1.0, -1.0])

    def __rsub__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        o = self._lift(other)
        return forward_op(self.tape, "mul", [self, o], [o.value, self.value])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        o = self._lift(other)
        b = _guard(self.tape, o.value, "div")
        return forward_op(
            self.tape, "div", [self, o], [1.0 / b, -self.value / (b * b)], self.value / b
        )

    def __rtruediv__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        return self._lift(other).__truediv__(self)

    def __neg__(self):
        return forward_op(self.tape, "neg", [self], [-1.0])

    def __pos__(self):
        return self

    def __pow__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        if isinstance(other, Var):
            return power(self, other)
        p = float(other)
        a = self.value
        if p == 2.0:
            return forward_op(self.tape, "square", [self], [2.0 * a], a * a)
        val = a**p
        return forward_op(self.tape, "powc", [self], [p * a ** (p - 1.0)], val)

    def __rpow__(self, other):
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return NotImplemented
        return power(self._lift(other), self)

    # comparisons use forward values (for branching only)
    def __lt__(self, other):
        return self.value < float(other)

    def __le__(self, other):
        return self.value <= float(other)

    def __gt__(self, other):
        return self.value > float(other)

    def __ge__(self, other):
        return self.value >= float(other)

    # elementary functions (numpy dispatches object arrays to these) --------
    def exp(self):
        e = math.exp(self.value)
        return forward_op(self.tape, "exp", [self], [e], e)

    def log(self):
        a = _guard(self.tape, self.value, "log")
        return forward_op(self.tape, "log", [self], [1.0 / a], math.log(a))

    def log1p(self):
        a = self.value
        if 1.0 + a < EPS:
            self.tape.note(f"log1p argument {a!r} clamped")
            a = EPS - 1.0
        return forward_op(self.tape, "log1p", [self], [1.0 / (1.0 + a)], math.log1p(a))

    def expm1(self):
        return forward_op(self.tape, "expm1", [self], [math.exp(self.value)], math.expm1(self.value))

    def sqrt(self):
        s = math.sqrt(self.value)
        return forward_op(self.tape, "sqrt", [self], [0.5 / s if s > 0 else math.inf], s)

    def tanh(self):
        t = math.tanh(self.value)
        return forward_op(self.tape, "tanh", [self], [1.0 - t * t], t)

    def sigmoid(self):
        s = special.expit(self.value)
        return forward_op(self.tape, "sigmoid", [self], [s * (1.0 - s)], s)

    def square(self):
        return self.__pow__(2)

    def abs(self):
        a = self.value
        return forward_op(self.tape, "abs", [self], [1.0 if a >= 0 else -1.0], abs(a))

    __abs__ = abs

    def conjugate(self):
        return self


def _guard(tape: Tape, a: float, op: str) -> float:
    if abs(a) < EPS:
        tape.note(f"{op} argument {a!r} clamped to +/-{EPS}")
        return EPS if a >= 0 else -EPS
    return a


def forward_op(tape: Tape, op: str, inputs: Sequence[Var], locals_: Sequence[float], value=None) -> Var:
    """Record ``op`` applied to ``inputs``.

    ``locals_`` holds d(out)/d(input) for every input at the forward point.
    When ``value`` is omitted it is computed for the tags ``add``, ``sub``,
    ``mul`` and ``neg``.
    """
    if len(inputs) != len(locals_):
        raise StructuralError(f"{op}: {len(inputs)} inputs but {len(locals_)} local partials")
    for v in inputs:
        if not isinstance(v, Var) or v.tape is not tape:
            raise StructuralError(f"{op}: input does not belong to this tape")
        if v.index >= len(tape):
            raise StructuralError(f"{op}: dangling node index {v.index}")
    if value is None:
        vals = [v.value for v in inputs]
        if op == "add":
            value = vals[0] + vals[1]
        elif op == "sub":
            value = vals[0] - vals[1]
        elif op == "mul":
            value = vals[0] * vals[1]
        elif op == "neg":
            value = -vals[0]
        else:
            raise StructuralError(f"no value supplied for op {op!r}")
    return tape._push(op, [v.index for v in inputs], locals_, value)


def backward(tape: Tape, output: Var) -> np.ndarray:
    """Adjoint of ``output`` w.r.t. every node of ``tape``.

    Entry ``i`` is d(output)/d(node i); constant leaves are zeroed.  The
    tape is not modified.
    """
    if output.tape is not tape:
        raise StructuralError("output does not belong to this tape")
    adj = np.zeros(len(tape))
    adj[output.index] = 1.0
    inputs, partials = tape.inputs, tape.partials
    for k in range(output.index, -1, -1):
        a = adj[k]
        if a == 0.0:
            continue
        for i, p in zip(inputs[k], partials[k]):
            adj[i] += a * p
    for k, op in enumerate(tape.ops):
        if op == "const":
            adj[k] = 0.0
    return adj


def grad(output: Var, wrt: Iterable) -> np.ndarray:
    """Gradient of ``output`` w.r.t. the Vars in ``wrt`` (array shape kept)."""
    wrt_arr = np.asarray(wrt, dtype=object)
    adj = backward(output.tape, output)
    out = np.zeros(wrt_arr.shape)
    for idx in np.ndindex(wrt_arr.shape):
        v = wrt_arr[idx]
        out[idx] = adj[v.index] if isinstance(v, Var) else 0.0
    return out


def value_of(x):
    """Float (array) values of Vars; floats pass through."""
    if isinstance(x, Var):
        return x.value
    if isinstance(x, np.ndarray) and x.dtype == object:
        return np.vectorize(lambda v: v.value if isinstance(v, Var) else float(v), otypes=[float])(x)
    return x


# primitives beyond the operator set ---------------------------------------

def power(base: Var, expo: Var) -> Var:
    """``base ** expo`` with both arguments differentiable (base > 0)."""
    tape = base.tape
    a, b = base.value, expo.value
    val = a**b
    return forward_op(tape, "pow", [base, expo], [b * a ** (b - 1.0), val * math.log(_guard(tape, a, "pow"))], val)


def norm_cdf(x: Var) -> Var:
    val = 0.5 * math.erfc(-x.value / _SQRT2)
    return forward_op(x.tape, "norm_cdf", [x], [norm_pdf_value(x.value)], val)


def norm_pdf(x: Var) -> Var:
    p = norm_pdf_value(x.value)
    return forward_op(x.tape, "norm_pdf", [x], [-x.value * p], p)


def norm_pdf_value(x: float) -> float:
    return _INV_SQRT2PI * math.exp(-0.5 * x * x)


def norm_ppf(u: Var) -> Var:
    x = float(special.ndtri(u.value))
    return forward_op(u.tape, "norm_ppf", [u], [1.0 / norm_pdf_value(x)], x)


def lgamma(x: Var) -> Var:
    return forward_op(x.tape, "lgamma", [x], [float(special.digamma(x.value))], math.lgamma(x.value))


def _dnu(f, x, nu, h=1e-4):
    # Richardson-extrapolated central difference in the degrees of freedom.
    d1 = (f(x, nu + h) - f(x, nu - h)) / (2 * h)
    d2 = (f(x, nu + h / 2) - f(x, nu - h / 2)) / h
    return (4 * d2 - d1) / 3


def _t_pdf(x: float, nu: float) -> float:
    return math.exp(
        math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2) - 0.5 * math.log(nu * math.pi)
        - (nu + 1) / 2 * math.log1p(x * x / nu)
    )


def t_cdf(x: Var, nu) -> Var:
    """Student-t CDF; ``nu`` may be a float or a Var."""
    xv = x.value
    nv = nu.value if isinstance(nu, Var) else float(nu)
    val = float(special.stdtr(nv, xv))
    dx = _t_pdf(xv, nv)
    if isinstance(nu, Var):
        dn = _dnu(lambda a, n: special.stdtr(n, a), xv, nv)
        return forward_op(x.tape, "t_cdf", [x, nu], [dx, dn], val)
    return forward_op(x.tape, "t_cdf", [x], [dx], val)


def t_ppf(u: Var, nu) -> Var:
    """Student-t quantile; ``nu`` may be a float or a Var."""
    uv = u.value
    nv = nu.value if isinstance(nu, Var) else float(nu)
    x = float(special.stdtrit(nv, uv))
    pdf = _t_pdf(x, nv)
    if isinstance(nu, Var):
        dn = -_dnu(lambda a, n: special.stdtr(n, a), x, nv) / pdf
        return forward_op(u.tape, "t_ppf", [u, nu], [1.0 / pdf, dn], x)
    return forward_op(u.tape, "t_ppf", [u], [1.0 / pdf], x)


def custom(tape: Tape, op: str, inputs: Sequence, value: float, partials: Sequence[float]) -> Var:
    """Record an externally evaluated function (e.g. an implicit inverse)."""
    ins = [v if isinstance(v, Var) else tape.constant(float(v)) for v in inputs]
    return forward_op(tape, op, ins, partials, value)


def central_difference(f, x, h=1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at float array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g
