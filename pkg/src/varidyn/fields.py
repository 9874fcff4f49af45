"""Coordinate fields built on the expression language.

Scalars, covectors and symmetric 2-tensors over ``q1..qn``.  Every field is
immutable; evaluation accepts floats, numpy arrays (one array per coordinate,
all of the same batch shape) or :class:`~varidyn.dual.Dual` values, so the same
field object serves value queries, grid sweeps and exact derivatives.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import dual as D
from . import expr as X
from .errors import DimensionError, FieldDomainError, SignatureError


def _as_box(box, dim):
    if box is None:
        return None
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if lo.shape != (dim,) or hi.shape != (dim,):
        raise DimensionError(f"domain box must have {dim} lower and upper bounds")
    if np.any(lo > hi):
        raise ValueError("domain box lower bound exceeds upper bound")
    return lo, hi


def _intersect(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return np.maximum(a[0], b[0]), np.minimum(a[1], b[1])


class ScalarField:
    """Scalar function of the coordinates, optionally restricted to a box."""

    def __init__(self, dim: int, body, box=None):
        if isinstance(body, str):
            body = X.parse_expression(body, dim)
        body = X.as_node(body)
        if body.max_index() > dim:
            raise DimensionError(f"expression uses q{body.max_index()} but dim is {dim}")
        self.dim = dim
        self.body = body
        self.box = _as_box(box, dim)
        self._f = X.compile_node(body)

    @classmethod
    def constant(cls, value: float, dim: int) -> "ScalarField":
        return cls(dim, X.as_node(value))

    @property
    def is_constant(self) -> bool:
        return X.is_constant(self.body)

    def __repr__(self):
        return f"ScalarField({self.dim}, {str(self.body)!r})"

    def __str__(self):
        return str(self.body)

    def _outside(self, q):
        lo, hi = self.box
        bad = False
        for k in range(self.dim):
            x = D.primal(q[k])
            bad = bad | (np.less(x, lo[k]) | np.greater(x, hi[k]))
        return bad

    def __call__(self, q):
        if self.box is not None:
            bad = self._outside(q)
            if np.any(bad) and not D.is_lenient():
                raise FieldDomainError(f"point outside the declared domain box of {self}")
            val = self._f(q)
            if np.any(bad):
                if isinstance(val, np.ndarray):
                    return np.where(bad, np.nan, val)
                if not isinstance(val, D.Dual):
                    return float("nan")
            return val
        return self._f(q)

    # algebra producing new fields ----------------------------------------
    def _combine(self, other, fn):
        if isinstance(other, ScalarField):
            if other.dim != self.dim:
                raise DimensionError("fields of different dimension")
            out = ScalarField(self.dim, fn(self.body, other.body))
            out.box = _intersect(self.box, other.box)
            return out
        out = ScalarField(self.dim, fn(self.body, X.as_node(other)))
        out.box = self.box
        return out

    def __add__(self, o):
        return self._combine(o, lambda a, b: a + b)

    def __radd__(self, o):
        return self._combine(o, lambda a, b: b + a)

    def __sub__(self, o):
        return self._combine(o, lambda a, b: a - b)

    def __rsub__(self, o):
        return self._combine(o, lambda a, b: b - a)

    def __mul__(self, o):
        return self._combine(o, lambda a, b: a * b)

    def __rmul__(self, o):
        return self._combine(o, lambda a, b: b * a)

    def __truediv__(self, o):
        return self._combine(o, lambda a, b: a / b)

    def __rtruediv__(self, o):
        return self._combine(o, lambda a, b: b / a)

    def __neg__(self):
        out = ScalarField(self.dim, -self.body)
        out.box = self.box
        return out

    def apply(self, name: str) -> "ScalarField":
        out = ScalarField(self.dim, X.call(name, self.body))
        out.box = self.box
        return out

    def with_box(self, box) -> "ScalarField":
        out = ScalarField(self.dim, self.body)
        out.box = _as_box(box, self.dim)
        return out


def as_field(x, dim: int) -> ScalarField:
    if isinstance(x, ScalarField):
        if x.dim != dim:
            raise DimensionError(f"field has dim {x.dim}, expected {dim}")
        return x
    return ScalarField(dim, x)


def _check_point(f: ScalarField, q):
    if len(q) != f.dim:
        raise DimensionError(f"expected {f.dim} coordinates, got {len(q)}")


def eval_field(f: ScalarField, q: Sequence[float]) -> float:
    """Evaluate a scalar field at a coordinate vector."""
    _check_point(f, q)
    try:
        return float(f([float(x) for x in q]))
    except ZeroDivisionError as exc:  # pragma: no cover - div() already guards
        raise FieldDomainError(str(exc)) from exc


def partial_derivative(f: ScalarField, q: Sequence[float], order: int, indices) -> float:
    """Exact first or second partial derivative via dual arithmetic.

    ``indices`` are 0-based coordinate positions: ``(i,)`` for order 1,
    ``(i, j)`` for order 2.
    """
    _check_point(f, q)
    indices = tuple(indices)
    if order not in (1, 2) or len(indices) != order:
        raise ValueError("order must be 1 or 2 with a matching number of indices")
    if any(i < 0 or i >= f.dim for i in indices):
        raise DimensionError(f"derivative index out of range for dim {f.dim}")
    qs = D.Dual.seed([float(x) for x in q], order=order)
    y = f(qs)
    if not isinstance(y, D.Dual):
        return 0.0
    if order == 1:
        return float(y.grad[indices[0]])
    return float(y.hess[indices[0], indices[1]])


class CovectorField:
    """Ordered tuple of scalar fields, one component per coordinate."""

    def __init__(self, dim: int, components):
        comps = [as_field(c, dim) for c in components]
        if len(comps) != dim:
            raise DimensionError(f"covector needs {dim} components, got {len(comps)}")
        self.dim = dim
        self.components = tuple(comps)

    @classmethod
    def zero(cls, dim):
        return cls(dim, [0.0] * dim)

    def __getitem__(self, k):
        return self.components[k]

    def __len__(self):
        return self.dim

    def __call__(self, q):
        return [c(q) for c in self.components]


class SymTensorField:
    """Symmetric ``size x size`` matrix of scalar fields over ``dim`` coordinates.

    Only one object is stored per unordered index pair, so evaluated matrices
    are symmetric bit for bit.
    """

    def __init__(self, dim: int, components, size: int | None = None):
        rows = [list(r) for r in components]
        size = len(rows) if size is None else size
        if len(rows) != size or any(len(r) != size for r in rows):
            raise DimensionError(f"tensor components must form a {size}x{size} array")
        comps = {}
        for i in range(size):
            for j in range(i, size):
                a = as_field(rows[i][j], dim)
                b = as_field(rows[j][i], dim)
                if str(a) != str(b):
                    raise SignatureError(
                        f"components [{i}][{j}] = {a} and [{j}][{i}] = {b} differ")
                comps[i, j] = a
        self.dim = dim
        self.size = size
        self._c = comps

    @classmethod
    def from_upper(cls, dim, upper: dict, size: int) -> "SymTensorField":
        """Build from ``{(i, j): component}`` with ``i <= j``; missing entries are zero."""
        rows = [[0.0] * size for _ in range(size)]
        for (i, j), c in upper.items():
            rows[i][j] = c
            rows[j][i] = c
        return cls(dim, rows, size)

    @classmethod
    def diagonal(cls, dim, entries) -> "SymTensorField":
        s = len(entries)
        return cls.from_upper(dim, {(i, i): e for i, e in enumerate(entries)}, s)

    def component(self, i: int, j: int) -> ScalarField:
        return self._c[(i, j) if i <= j else (j, i)]

    def __call__(self, q):
        """Nested lists of component values; entry [j][i] is entry [i][j]."""
        vals = {k: f(q) for k, f in self._c.items()}
        n = self.size
        return [[vals[(i, j) if i <= j else (j, i)] for j in range(n)] for i in range(n)]

    def matrix(self, q) -> np.ndarray:
        return np.array(self([float(x) for x in q]), dtype=float)

    def eigenvalues(self, q) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix(q))

    def check_positive_definite(self, q):
        ev = self.eigenvalues(q)
        if np.any(ev <= 0):
            raise SignatureError(f"tensor not positive definite at {list(q)}: eigenvalues {ev}")

    def check_lorentzian(self, q):
        """Signature (+, -, ..., -) by eigenvalue signs."""
        ev = np.sort(self.eigenvalues(q))[::-1]
        if not (ev[0] > 0 and np.all(ev[1:] < 0)):
            raise SignatureError(f"metric signature is not (+,-,...,-) at {list(q)}: {ev}")
