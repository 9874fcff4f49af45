"""Second-order forward-mode dual numbers and domain-checked elementary functions.

A :class:`Dual` carries a primal value together with its gradient and Hessian
with respect to a fixed set of independent variables.  The primal may be a
Python float or a numpy array; in the array case every derivative slot carries
the same trailing batch shape, so one evaluation differentiates a whole grid of
points at once.

The free functions (:func:`sqrt`, :func:`log`, :func:`div`, ...) accept floats,
arrays and duals alike.  They raise :class:`~varidyn.errors.FieldDomainError`
instead of producing NaN, except inside a :func:`lenient` block where invalid
entries become NaN so that vectorised solvers can reject them elementwise.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from typing import Sequence

import numpy as np

from .errors import FieldDomainError

_lenient = contextvars.ContextVar("varidyn_lenient", default=False)


@contextlib.contextmanager
def lenient():
    """Within this block domain violations yield NaN instead of raising."""
    token = _lenient.set(True)
    try:
        with np.errstate(all="ignore"):
            yield
    finally:
        _lenient.reset(token)


def is_lenient() -> bool:
    return _lenient.get()


def _outer(a, b):
    return a[:, None] * b[None, :]


class Dual:
    """Truncated second-order Taylor jet ``val + grad.dx + 1/2 dx.hess.dx``."""

    __slots__ = ("val", "grad", "hess")
    __array_ufunc__ = None  # make ndarray <op> Dual defer to Dual's reflected ops

    def __init__(self, val, grad, hess=None):
        self.val = val
        self.grad = grad
        self.hess = hess

    @classmethod
    def seed(cls, values: Sequence, order: int = 2) -> list["Dual"]:
        """Independent variables with unit tangents, one per entry of ``values``."""
        n = len(values)
        shape = np.shape(values[0]) if n else ()
        out = []
        for i, v in enumerate(values):
            g = np.zeros((n,) + shape)
            g[i] = 1.0
            h = np.zeros((n, n) + shape) if order >= 2 else None
            out.append(cls(v if shape else float(v), g, h))
        return out

    @classmethod
    def compose(cls, value, grad, hess, inputs: Sequence) -> "Dual":
        """Chain a local jet (taken w.r.t. the primals of ``inputs``) onto ``inputs``.

        Only scalar (non-batched) duals are supported here.
        """
        duals = [x for x in inputs if isinstance(x, Dual)]
        if not duals:
            return value
        nout = duals[0].grad.shape[0]
        order2 = all(d.hess is not None for d in duals) and hess is not None
        jac = np.zeros((len(inputs), nout))
        for i, x in enumerate(inputs):
            if isinstance(x, Dual):
                jac[i] = x.grad
        g = jac.T @ np.asarray(grad)
        if not order2:
            return cls(value, g, None)
        h = jac.T @ np.asarray(hess) @ jac
        for i, x in enumerate(inputs):
            if isinstance(x, Dual) and grad[i] != 0.0:
                h = h + grad[i] * x.hess
        return cls(value, g, h)

    # -- helpers -----------------------------------------------------------
    def _chain(self, f0, f1, f2) -> "Dual":
        g = self.grad * f1
        h = None
        if self.hess is not None:
            h = self.hess * f1 + _outer(self.grad, self.grad) * f2
        return Dual(f0, g, h)

    @property
    def nvars(self) -> int:
        return self.grad.shape[0]

    def __repr__(self):
        return f"Dual({self.val!r}, grad={self.grad!r})"

    # -- arithmetic --------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.grad, None if self.hess is None else -self.hess)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            h = None
            if self.hess is not None and other.hess is not None:
                h = self.hess + other.hess
            return Dual(self.val + other.val, self.grad + other.grad, h)
        return Dual(self.val + other, self.grad, self.hess)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            h = None
            if self.hess is not None and other.hess is not None:
                h = self.hess - other.hess
            return Dual(self.val - other.val, self.grad - other.grad, h)
        return Dual(self.val - other, self.grad, self.hess)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.grad, None if self.hess is None else -self.hess)

    def __mul__(self, other):
        if isinstance(other, Dual):
            a, b = self.val, other.val
            g = self.grad * b + other.grad * a
            h = None
            if self.hess is not None and other.hess is not None:
                cross = _outer(self.grad, other.grad)
                h = self.hess * b + other.hess * a + cross + np.swapaxes(cross, 0, 1)
            return Dual(a * b, g, h)
        return Dual(self.val * other, self.grad * other,
                    None if self.hess is None else self.hess * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def primal(x):
    return x.val if isinstance(x, Dual) else x


def _violation(mask_bad, message):
    """Raise unless lenient; ``mask_bad`` is a bool or bool array."""
    if _lenient.get():
        return
    if np.any(mask_bad):
        raise FieldDomainError(message)


def _np_or_math(v, npf, mf):
    if isinstance(v, np.ndarray):
        with np.errstate(all="ignore"):
            return npf(v)
    try:
        return mf(v)
    except (ValueError, OverflowError):
        return math.nan


def reciprocal(x):
    if isinstance(x, Dual):
        v = x.val
        _violation(v == 0, "division by zero")
        with np.errstate(all="ignore"):
            r = 1.0 / v if isinstance(v, np.ndarray) or v != 0 else math.nan
        return x._chain(r, -r * r, 2.0 * r * r * r)
    if isinstance(x, np.ndarray):
        _violation(x == 0, "division by zero")
        with np.errstate(all="ignore"):
            return 1.0 / x
    if x == 0:
        _violation(True, "division by zero")
        return math.nan
    return 1.0 / x


def div(a, b):
    if isinstance(b, Dual):
        return a * reciprocal(b)
    if isinstance(b, np.ndarray):
        _violation(b == 0, "division by zero")
        with np.errstate(all="ignore"):
            return a * (1.0 / b) if isinstance(a, Dual) else a / b
    if b == 0:
        _violation(True, "division by zero")
        return a * math.nan
    return a * (1.0 / b)


def sqrt(x):
    if isinstance(x, Dual):
        v = x.val
        _violation(v <= 0, "square root is not differentiable at non-positive values")
        r = _np_or_math(v, np.sqrt, math.sqrt)
        if not isinstance(v, np.ndarray) and not r > 0:
            return x._chain(r, math.nan, math.nan)
        with np.errstate(all="ignore"):
            return x._chain(r, 0.5 / r, -0.25 / (r * v))
    _violation(np.less(x, 0), "square root of a negative value")
    return _np_or_math(x, np.sqrt, math.sqrt)


def exp(x):
    if isinstance(x, Dual):
        e = _np_or_math(x.val, np.exp, math.exp)
        return x._chain(e, e, e)
    return _np_or_math(x, np.exp, math.exp)


def log(x):
    if isinstance(x, Dual):
        v = x.val
        _violation(v <= 0, "logarithm of a non-positive value")
        with np.errstate(all="ignore"):
            r = 1.0 / v if isinstance(v, np.ndarray) else (1.0 / v if v != 0 else math.nan)
        return x._chain(_np_or_math(v, np.log, math.log), r, -r * r)
    _violation(np.less_equal(x, 0), "logarithm of a non-positive value")
    return _np_or_math(x, np.log, math.log)


def sin(x):
    if isinstance(x, Dual):
        s = _np_or_math(x.val, np.sin, math.sin)
        c = _np_or_math(x.val, np.cos, math.cos)
        return x._chain(s, c, -s)
    return _np_or_math(x, np.sin, math.sin)


def cos(x):
    if isinstance(x, Dual):
        s = _np_or_math(x.val, np.sin, math.sin)
        c = _np_or_math(x.val, np.cos, math.cos)
        return x._chain(c, -s, -c)
    return _np_or_math(x, np.cos, math.cos)


def absolute(x):
    if isinstance(x, Dual):
        v = x.val
        _violation(v == 0, "absolute value is not differentiable at zero")
        s = np.sign(v) if isinstance(v, np.ndarray) else math.copysign(1.0, v)
        return x._chain(abs(v) if not isinstance(v, np.ndarray) else np.abs(v), s, 0.0 * s)
    return np.abs(x) if isinstance(x, np.ndarray) else abs(x)


def _is_integer(p) -> bool:
    return isinstance(p, (int, np.integer)) or (isinstance(p, float) and p.is_integer())


def power(a, b):
    """``a ** b`` with integer exponents allowed on negative bases."""
    if isinstance(b, (Dual, np.ndarray)):
        return exp(b * log(a))
    p = b
    if isinstance(a, Dual):
        v = a.val
        if _is_integer(p):
            k = int(p)
            if k == 0:
                return 1.0 + 0.0 * a
            if k < 0:
                _violation(v == 0, "zero raised to a negative power")
            with np.errstate(all="ignore"):
                f0 = v ** k
                f1 = k * v ** (k - 1)
                f2 = k * (k - 1) * v ** (k - 2) if k != 1 else 0.0 * v
            return a._chain(f0, f1, f2)
        _violation(v <= 0, "non-integer power of a non-positive value")
        with np.errstate(all="ignore"):
            f0 = np.power(v, p) if isinstance(v, np.ndarray) else (v ** p if v > 0 else math.nan)
            return a._chain(f0, p * f0 / v, p * (p - 1) * f0 / (v * v))
    if _is_integer(p):
        k = int(p)
        if k < 0:
            _violation(np.equal(a, 0), "zero raised to a negative power")
        with np.errstate(all="ignore"):
            if isinstance(a, np.ndarray):
                return np.power(a.astype(float), float(k))
            if a == 0 and k < 0:
                return math.nan
            return float(a) ** k
    _violation(np.less(a, 0), "non-integer power of a negative value")
    if isinstance(a, np.ndarray):
        with np.errstate(all="ignore"):
            return np.power(a, p)
    if a < 0:
        return math.nan
    return float(a) ** p


def derivative(f, x0: float, order: int = 1) -> float:
    """Derivative of a univariate generic function at ``x0``."""
    (x,) = Dual.seed([float(x0)], order=2)
    y = f(x)
    if not isinstance(y, Dual):
        return 0.0
    return float(y.grad[0]) if order == 1 else float(y.hess[0, 0])
