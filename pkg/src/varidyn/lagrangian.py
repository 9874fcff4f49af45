"""Lagrangian functions and the generic constructions built on them.

A :class:`LagrangianFn` wraps a generic callable ``func(q, v, t)`` where ``q``
and ``v`` are sequences whose entries are floats, numpy arrays of a common
batch shape, or :class:`~varidyn.dual.Dual` values.  All derivative queries go
through one second-order dual evaluation (the "jet") in the variables
``(q, v, t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dual as D
from .errors import (ConvergenceError, DegenerateInputError, DimensionError, FieldDomainError,
                     LagrangianError, NoBracketError, QuadratureError, SingularMassMatrixError)

RANK_RATIO = 1e-8
HOMOGENEITY_TOL = 1e-12
SPOT_CHECK_POINTS = 20

# failures that mean "this sample point is not admissible", not "the flag is wrong"
_INADMISSIBLE = (FieldDomainError, DegenerateInputError, NoBracketError, ConvergenceError,
                 QuadratureError, ZeroDivisionError)


@dataclass(frozen=True)
class Domain:
    """Box of admissible coordinates and velocities used for sampling."""

    q_lo: tuple
    q_hi: tuple
    v_lo: tuple
    v_hi: tuple
    t_lo: float = 0.0
    t_hi: float = 1.0

    def __post_init__(self):
        for name in ("q_lo", "q_hi", "v_lo", "v_hi"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if len(self.q_lo) != len(self.q_hi) or len(self.v_lo) != len(self.v_hi):
            raise DimensionError("domain bounds have inconsistent lengths")

    @classmethod
    def cube(cls, dof, q=(-1.0, 1.0), v=(-1.0, 1.0)):
        return cls((q[0],) * dof, (q[1],) * dof, (v[0],) * dof, (v[1],) * dof)

    @property
    def dof(self):
        return len(self.q_lo)

    def sample(self, rng: np.random.Generator, k: int):
        """``k`` uniform points as arrays of shape (k, dof) and (k,)."""
        n = self.dof
        Q = np.asarray(self.q_lo) + rng.random((k, n)) * (np.asarray(self.q_hi) - self.q_lo)
        V = np.asarray(self.v_lo) + rng.random((k, n)) * (np.asarray(self.v_hi) - self.v_lo)
        T = self.t_lo + rng.random(k) * (self.t_hi - self.t_lo)
        return Q, V, T

    def drop(self, i: int) -> "Domain":
        keep = [k for k in range(self.dof) if k != i]
        pick = lambda xs: tuple(xs[k] for k in keep)  # noqa: E731
        return Domain(pick(self.q_lo), pick(self.q_hi), pick(self.v_lo), pick(self.v_hi),
                      self.t_lo, self.t_hi)

    def insert(self, i: int, q_range, v_range) -> "Domain":
        ins = lambda xs, x: tuple(xs[:i]) + (x,) + tuple(xs[i:])  # noqa: E731
        return Domain(ins(self.q_lo, q_range[0]), ins(self.q_hi, q_range[1]),
                      ins(self.v_lo, v_range[0]), ins(self.v_hi, v_range[1]),
                      self.t_lo, self.t_hi)


class Jet:
    """Value, gradient and Hessian of a Lagrangian in the variables (q, v, t)."""

    def __init__(self, n, val, grad, hess):
        self.n = n
        self.val = val
        self.grad = grad
        self.hess = hess

    @property
    def q(self):
        return self.grad[: self.n]

    @property
    def v(self):
        return self.grad[self.n: 2 * self.n]

    @property
    def t(self):
        return self.grad[2 * self.n]

    @property
    def vv(self):
        n = self.n
        return self.hess[n:2 * n, n:2 * n]

    @property
    def vq(self):
        n = self.n
        return self.hess[n:2 * n, :n]

    @property
    def vt(self):
        n = self.n
        return self.hess[n:2 * n, 2 * n]


def _broadcast_inputs(values):
    shapes = [np.shape(D.primal(x)) for x in values]
    shape = np.broadcast_shapes(*shapes) if shapes else ()
    if shape == ():
        return [float(x) for x in values], shape
    return [np.broadcast_to(np.asarray(x, float), shape).copy() for x in values], shape


class LagrangianFn:
    """A Lagrangian ``L(q, v, t)`` with structural flags and derivative queries.

    Parameters
    ----------
    func : callable
        Generic ``func(q, v, t)``; see the module docstring.
    dof : int
        Number of coordinates.
    time_independent, homogeneous : bool
        Declared flags, verified by spot checks when ``domain`` is given.
    energy : EnergyFn, optional
        Closed-form energy function to use instead of the generic construction.
    momenta : dict, optional
        ``{index: P(q, w, v, t)}`` closed-form conjugate momenta, where ``w`` is
        the velocity in slot ``index`` and ``v`` the full velocity of which
        slot ``index`` is ignored.
    """

    def __init__(self, func: Callable, dof: int, *, time_independent: bool = True,
                 homogeneous: bool = False, name: str = "L", domain: Domain | None = None,
                 energy: "EnergyFn | None" = None, momenta: dict | None = None,
                 check: bool = True, meta: dict | None = None):
        if dof < 1:
            raise DimensionError("a Lagrangian needs at least one degree of freedom")
        if domain is not None and domain.dof != dof:
            raise DimensionError(f"domain has {domain.dof} coordinates, Lagrangian has {dof}")
        self.func = func
        self.dof = dof
        self.time_independent = time_independent
        self.homogeneous = homogeneous
        self.name = name
        self.domain = domain
        self.energy = energy
        self.momenta = dict(momenta or {})
        self.meta = dict(meta or {})
        if check and domain is not None and (time_independent or homogeneous):
            self.verify_flags()

    def __repr__(self):
        flags = [f for f, on in (("time-independent", self.time_independent),
                                 ("homogeneous", self.homogeneous)) if on]
        return f"LagrangianFn({self.name!r}, dof={self.dof}, {', '.join(flags) or 'general'})"

    def _check(self, q, v):
        if len(q) != self.dof or len(v) != self.dof:
            raise DimensionError(
                f"{self.name} has {self.dof} degrees of freedom, got q of {len(q)} and v of {len(v)}")

    def __call__(self, q, v, t=0.0):
        self._check(q, v)
        return self.func(list(q), list(v), t)

    def value(self, q, v, t=0.0) -> float:
        return float(self(list(map(float, q)), list(map(float, v)), float(t)))

    def replace(self, **changes) -> "LagrangianFn":
        """Copy with some attributes changed; flags are not re-verified."""
        out = object.__new__(LagrangianFn)
        out.__dict__.update(self.__dict__)
        out.momenta = dict(self.momenta)
        out.meta = dict(self.meta)
        for k, val in changes.items():
            if k not in out.__dict__:
                raise AttributeError(k)
            setattr(out, k, val)
        return out

    # -- derivatives ---------------------------------------------------------
    def jet(self, q, v, t=0.0, order: int = 2) -> Jet:
        """Dual evaluation in all of (q, v, t); works on floats and arrays."""
        self._check(q, v)
        n = self.dof
        vals, _ = _broadcast_inputs(list(q) + list(v) + [t])
        seeds = D.Dual.seed(vals, order=order)
        y = self.func(seeds[:n], seeds[n:2 * n], seeds[2 * n])
        if not isinstance(y, D.Dual):
            m = 2 * n + 1
            shape = np.shape(y)
            return Jet(n, y, np.zeros((m,) + shape), np.zeros((m, m) + shape))
        return Jet(n, y.val, y.grad, y.hess)

    def dL_dq(self, q, v, t=0.0):
        return np.asarray(self.jet(q, v, t, order=1).q)

    def dL_dv(self, q, v, t=0.0):
        return np.asarray(self.jet(q, v, t, order=1).v)

    def d2L_dvdv(self, q, v, t=0.0):
        return np.asarray(self.jet(q, v, t).vv)

    def d2L_dvdq(self, q, v, t=0.0):
        return np.asarray(self.jet(q, v, t).vq)

    def d2L_dvdt(self, q, v, t=0.0):
        return np.asarray(self.jet(q, v, t).vt)

    # -- flag verification -----------------------------------------------------
    def verify_flags(self, points: int = SPOT_CHECK_POINTS, seed: int = 0, tol: float = 1e-12):
        """Spot-check the declared flags on random admissible points.

        Raises
        ------
        LagrangianError
            A flag fails, or too few admissible points were found.
        """
        rng = np.random.default_rng(seed)
        Q, V, T = self.domain.sample(rng, 10 * points)
        lambdas = (0.5, 2.0, 10.0)
        good = 0
        for q, v, t in zip(Q, V, T):
            if good >= points:
                break
            try:
                base = self.value(q, v, t)
                if self.time_independent:
                    other = self.value(q, v, t + 1.37)
                    if abs(other - base) > tol * (1 + abs(base)):
                        raise LagrangianError(
                            f"{self.name} declared time-independent but L(t) changes by "
                            f"{abs(other - base):.3e} at q={q.tolist()}, v={v.tolist()}")
                if self.homogeneous:
                    ok, dev = homogeneity_check(self, q, v, t, lambdas)
                    if not ok:
                        raise LagrangianError(
                            f"{self.name} declared homogeneous of degree one but deviates by "
                            f"{dev:.3e} at q={q.tolist()}, v={v.tolist()}")
            except _INADMISSIBLE:
                continue
            good += 1
        if good < min(points, 5):
            raise LagrangianError(
                f"only {good} admissible spot-check points for {self.name}; adjust its domain")


class EnergyFn:
    """Energy-like function ``G(q, v)`` accepting floats, arrays or duals."""

    def __init__(self, func: Callable, dof: int, name: str = "G"):
        self.func = func
        self.dof = dof
        self.name = name

    def __repr__(self):
        return f"EnergyFn({self.name!r}, dof={self.dof})"

    def __call__(self, q, v):
        if len(q) != self.dof or len(v) != self.dof:
            raise DimensionError(f"{self.name} expects {self.dof} coordinates and velocities")
        return self.func(list(q), list(v))

    def value(self, q, v) -> float:
        return float(self(list(map(float, q)), list(map(float, v))))


def _first_order_chain(val, partials, inputs):
    """Dual carrying ``sum_k partials[k] * d inputs[k]``; first order only."""
    duals = [x for x in inputs if isinstance(x, D.Dual)]
    for d in duals:
        if d.hess is not None:
            raise LagrangianError(
                "second derivatives of a derived energy function would need third derivatives "
                "of the Lagrangian; attach a closed-form energy instead")
    grad = 0.0
    for p, x in zip(partials, inputs):
        if isinstance(x, D.Dual):
            grad = grad + x.grad * p
    return D.Dual(val, grad, None)


def energy_function(L: LagrangianFn) -> EnergyFn:
    """``G(q, v) = v^i dL/dv^i - L`` built from the Lagrangian's jet.

    Dual inputs are supported to first order, which is all the root solvers
    need: ``dG/dv = H v`` and ``dG/dq_j = v^i L_{v_i q_j} - L_{q_j}``.
    """
    n = L.dof

    def G(q, v):
        args = list(q) + list(v)
        if not any(isinstance(x, D.Dual) for x in args):
            j = L.jet(q, v, 0.0, order=1)
            vals, _ = _broadcast_inputs(v)
            return sum(vals[i] * j.v[i] for i in range(n)) - j.val
        qp = [D.primal(x) for x in q]
        vp = [D.primal(x) for x in v]
        j = L.jet(qp, vp, 0.0)
        vals, _ = _broadcast_inputs(vp)
        val = sum(vals[i] * j.v[i] for i in range(n)) - j.val
        gq = [sum(vals[i] * j.vq[i, k] for i in range(n)) - j.q[k] for k in range(n)]
        gv = [sum(j.vv[k, i] * vals[i] for i in range(n)) for k in range(n)]
        return _first_order_chain(val, gq + gv, args)

    return EnergyFn(G, n, name=f"G[{L.name}]")


def conjugate_momentum(L: LagrangianFn, i: int, q, v, t=0.0) -> float:
    if not 0 <= i < L.dof:
        raise DimensionError(f"momentum index {i} outside 0..{L.dof - 1}")
    return float(L.jet(q, v, t, order=1).v[i])


def el_residual(L: LagrangianFn, q, v, a, t=0.0) -> np.ndarray:
    """Lagrange derivative ``dL/dq - d/dt dL/dv`` for candidate acceleration ``a``."""
    j = L.jet(q, v, t)
    a = np.asarray(a, float)
    v = np.asarray(v, float)
    return np.asarray(j.q) - (np.asarray(j.vv) @ a + np.asarray(j.vq) @ v + np.asarray(j.vt))


def acceleration(L: LagrangianFn, q, v, t=0.0) -> np.ndarray:
    """Solve ``H a = dL/dq - L_vq v - L_vt`` by pivoted LU."""
    j = L.jet(q, v, t)
    H = np.asarray(j.vv, float)
    rhs = np.asarray(j.q) - np.asarray(j.vq) @ np.asarray(v, float) - np.asarray(j.vt)
    s = np.linalg.svd(H, compute_uv=False)
    if s[0] == 0 or s[-1] <= RANK_RATIO * s[0]:
        raise SingularMassMatrixError(
            f"velocity Hessian of {L.name} is singular at q={list(q)}: singular values {s}")
    return np.linalg.solve(H, rhs)


@dataclass(frozen=True)
class HessianReport:
    matrix: np.ndarray
    singular_values: np.ndarray
    rank: int = field(default=0)


def velocity_hessian(L: LagrangianFn, q, v, t=0.0) -> HessianReport:
    H = np.array(L.jet(q, v, t).vv, dtype=float)
    s = np.linalg.svd(H, compute_uv=False)  # descending
    rank = int(np.sum(s > RANK_RATIO * s[0])) if s[0] > 0 else 0
    return HessianReport(H, s, rank)


def homogeneity_check(L: LagrangianFn, q, v, t=0.0, lambdas: Sequence[float] = (0.5, 2.0, 10.0)):
    """``(passed, max |L(q, lam v) - lam L(q, v)| / (1 + |lam L|))``."""
    if any(lam <= 0 for lam in lambdas):
        raise ValueError("scaling factors must be positive")
    base = L.value(q, v, t)
    dev = 0.0
    for lam in lambdas:
        scaled = L.value(q, [lam * x for x in v], t)
        dev = max(dev, abs(scaled - lam * base) / (1 + abs(lam * base)))
    return dev < HOMOGENEITY_TOL, dev


# -- helpers for Lagrangians defined through an inner solve ------------------

def input_kind(values) -> str:
    """'dual', 'array' or 'float' depending on the most general input."""
    kind = "float"
    for x in values:
        if isinstance(x, D.Dual):
            return "dual"
        if isinstance(x, np.ndarray) and x.ndim > 0:
            kind = "array"
    return kind


def _dual_item(x, idx):
    if isinstance(x, D.Dual):
        if np.ndim(x.val) == 0:
            return x
        h = None if x.hess is None else x.hess[(slice(None), slice(None)) + idx]
        return D.Dual(float(x.val[idx]), x.grad[(slice(None),) + idx], h)
    if isinstance(x, np.ndarray) and x.ndim > 0:
        return float(x[idx])
    return x


def per_point(scalar_fn, values):
    """Apply ``scalar_fn(list_of_scalars)`` over a batch of (possibly dual) inputs."""
    shape = np.broadcast_shapes(*[np.shape(D.primal(x)) for x in values])
    if shape == ():
        return scalar_fn(values)
    results = {}
    for idx in np.ndindex(*shape):
        results[idx] = scalar_fn([_dual_item(x, idx) for x in values])
    first = next(iter(results.values()))
    if not isinstance(first, D.Dual):
        out = np.empty(shape)
        for idx, r in results.items():
            out[idx] = r
        return out
    nv = first.grad.shape[0]
    val = np.empty(shape)
    grad = np.empty((nv,) + shape)
    hess = None if first.hess is None else np.empty((nv, nv) + shape)
    for idx, r in results.items():
        val[idx] = r.val
        grad[(slice(None),) + idx] = r.grad
        if hess is not None:
            hess[(slice(None), slice(None)) + idx] = r.hess
    return D.Dual(val, grad, hess)


def envelope_jet(F: Callable, z: Sequence[float], w: float):
    """Jet of ``z -> F(z, w(z))`` where ``w(z)`` makes ``F`` stationary in ``w``.

    Returns ``(value, gradient, hessian)`` from one dual evaluation of ``F``:
    the gradient is ``F_z`` and the Hessian the Schur complement
    ``F_zz - F_zw F_wz / F_ww``.
    """
    seeds = D.Dual.seed([float(x) for x in z] + [float(w)])
    y = F(seeds[:-1], seeds[-1])
    if not isinstance(y, D.Dual):
        m = len(z)
        return y, np.zeros(m), np.zeros((m, m))
    g, H = y.grad, y.hess
    Fww = H[-1, -1]
    if Fww == 0:
        raise DegenerateInputError("reduced Lagrangian has a degenerate inner Hessian")
    Fzw = H[:-1, -1]
    return y.val, g[:-1], H[:-1, :-1] - np.outer(Fzw, Fzw) / Fww
