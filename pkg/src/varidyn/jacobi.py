"""Jacobi reduction at fixed energy, time reconstruction, and the inverse problem.

The reduced Lagrangian is ``L_E(x, x') = [L(x, x'/theta) + E] theta`` with
``theta = phi_E(x, x')`` the positive root of ``G(x, x'/theta) = E``.  Its
derivatives come from the envelope property (``theta`` makes the bracket
stationary), so dual evaluation never differentiates through the root solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from . import dual as D
from . import numerics as N
from .errors import (ConvergenceError, DegenerateInputError, DimensionError, LagrangianError,
                     PreconditionError, QuadratureError, UndersampledOrbitError)
from .fields import SymTensorField
from .integrate import GL_NODES, GL_WEIGHTS, Orbit, Trajectory
from .lagrangian import (EnergyFn, LagrangianFn, _broadcast_inputs, energy_function,
                         envelope_jet, input_kind, per_point)

QUAD_TOL = 1e-11
TIME_TOL = 1e-8


def _ray_residual(G: EnergyFn, E: float, x, xp):
    """``fun(theta, idx) -> (G(x, x'/theta) - E, d/dtheta)`` for the solver."""
    arrays, shape = _broadcast_inputs(list(x) + list(xp))
    n = len(x)
    flat = [a.ravel() for a in arrays] if shape != () else arrays
    scalar = shape == ()

    def fun(theta, idx):
        if scalar:
            th = D.Dual(float(theta[0]), np.ones(1), None)
            xs, ps = flat[:n], flat[n:]
        else:
            th = D.Dual(theta, np.ones((1, theta.size)), None)
            xs = [a[idx] for a in flat[:n]]
            ps = [a[idx] for a in flat[n:]]
        y = G(xs, [p / th for p in ps])
        if not isinstance(y, D.Dual):
            return np.atleast_1d(y - E + 0.0 * theta), np.zeros(np.size(theta))
        return np.atleast_1d(y.val - E), np.atleast_1d(y.grad[0])

    return fun, shape


def _check_direction(xp):
    zero = np.ones(np.shape(D.primal(xp[0])), bool)
    for p in xp:
        zero &= np.asarray(D.primal(p)) == 0
    if np.any(zero):
        raise DegenerateInputError("orbit tangent x' = 0 has no time parametrization")


def solve_theta_prime(G: EnergyFn, E: float, x, xp, seed: float = 1.0):
    """Positive ``theta'`` with ``G(x, x'/theta') = E`` (floats or arrays)."""
    if len(x) != G.dof or len(xp) != G.dof:
        raise DimensionError(f"{G.name} expects {G.dof} coordinates")
    _check_direction(xp)
    fun, shape = _ray_residual(G, float(E), x, xp)
    size = None if shape == () else int(np.prod(shape))
    th = N.solve_root(fun, float(seed), size, positive=True, xtol=1e-15,
                      ftol=1e-12 * (1 + abs(E)))
    return th if size is None else np.reshape(th, shape)


def _phi_dual(G, E, x, xp, seed):
    """Dual-valued root by chord lifting from the primal solution."""
    xprim = [float(D.primal(a)) for a in x]
    pprim = [float(D.primal(a)) for a in xp]
    th0 = solve_theta_prime(G, E, xprim, pprim, seed)
    fun, _ = _ray_residual(G, E, xprim, pprim)
    slope = float(fun(np.array([th0]), np.array([0]))[1][0])
    return N.lift_root(lambda th: G(list(x), [p / th for p in xp]) - E, th0, slope)


@dataclass(frozen=True)
class JacobiReduction:
    reduced: LagrangianFn
    E: float
    seed: float
    source: LagrangianFn
    energy: EnergyFn

    def phiE(self, x, xp):
        """``theta'`` for orbit data; accepts floats, arrays or first-order duals."""
        vals = list(x) + list(xp)
        if input_kind(vals) == "dual":
            n = len(x)
            return per_point(lambda u: _phi_dual(self.energy, self.E, u[:n], u[n:], self.seed),
                             vals)
        return solve_theta_prime(self.energy, self.E, x, xp, self.seed)


def jacobi_reduce(L: LagrangianFn, E: float, seed: float = 1.0, energy: EnergyFn | None = None,
                  check: bool = True, name: str | None = None) -> JacobiReduction:
    """Homogeneous orbit Lagrangian of a time-independent ``L`` at energy ``E``.

    Parameters
    ----------
    energy : EnergyFn, optional
        Energy function of ``L``; defaults to the attached closed form or the
        generic ``v L_v - L`` construction.
    """
    if not L.time_independent:
        raise PreconditionError(f"{L.name} depends on time; Jacobi reduction needs dL/dt = 0")
    if L.homogeneous:
        raise PreconditionError(
            f"{L.name} is homogeneous of degree one: its energy vanishes identically and "
            "G = E has no solution")
    G = energy or L.energy or energy_function(L)
    E = float(E)
    seed = float(seed)
    n = L.dof

    def bracket(x, xp, th):
        return (L(list(x), [p / th for p in xp], 0.0) + E) * th

    def scalar_dual(vals):
        prim = [float(D.primal(u)) for u in vals[:2 * n]]
        th0 = solve_theta_prime(G, E, prim[:n], prim[n:], seed)
        val, g, H = envelope_jet(lambda z, th: bracket(z[:n], z[n:], th), prim, th0)
        m = 2 * n + 1
        gg = np.zeros(m)
        gg[:2 * n] = g
        HH = np.zeros((m, m))
        HH[:2 * n, :2 * n] = H
        return D.Dual.compose(val, gg, HH, vals)

    def func(x, xp, t):
        vals = list(x) + list(xp) + [t]
        if input_kind(vals) == "dual":
            return per_point(scalar_dual, vals)
        th = solve_theta_prime(G, E, x, xp, seed)
        return bracket(x, xp, th)

    reduced = LagrangianFn(func, n, time_independent=True, homogeneous=True,
                           name=name or f"Jacobi[{L.name}, E={E:g}]", domain=L.domain,
                           check=check and L.domain is not None,
                           meta={"edge": "jacobi", "E": E, "seed": seed})
    return JacobiReduction(reduced, E, seed, L, G)


# -- time reconstruction --------------------------------------------------------

def _trajectory_time(red: JacobiReduction, orbit: Trajectory, t0: float):
    nodes, h = orbit.step_nodes()
    n = orbit.dof

    def theta_at(tau):
        qn, vn = orbit.interpolate(tau.ravel())
        th = red.phiE([qn[:, k] for k in range(n)], [vn[:, k] for k in range(n)])
        return np.reshape(th, tau.shape)

    full = h * (theta_at(nodes) @ GL_WEIGHTS)
    left = orbit.t[:-1, None] + 0.5 * h[:, None] * GL_NODES[None, :]
    right = left + 0.5 * h[:, None]
    halves = 0.5 * h * ((theta_at(left) + theta_at(right)) @ GL_WEIGHTS)
    gap = float(np.sum(np.abs(full - halves)))
    if gap > TIME_TOL:
        raise UndersampledOrbitError(
            f"time quadrature changes by {gap:.2e} under step halving; sample the orbit densely")
    t = t0 + np.concatenate([[0.0], np.cumsum(halves)])
    Q = [orbit.q[:, k] for k in range(n)]
    P = [orbit.v[:, k] for k in range(n)]
    th = np.atleast_1d(red.phiE(Q, P))
    v = orbit.v / th[:, None]
    a = None
    if orbit.a is not None:
        # theta'' = d/dtau phi_E(x, x') from a first-order dual along (x', x'')
        dth = np.empty(len(orbit))
        for k in range(len(orbit)):
            xs = [D.Dual(float(orbit.q[k, i]), np.array([float(orbit.v[k, i])]), None)
                  for i in range(n)]
            ps = [D.Dual(float(orbit.v[k, i]), np.array([float(orbit.a[k, i])]), None)
                  for i in range(n)]
            dth[k] = float(red.phiE(xs, ps).grad[0])
        a = (orbit.a * th[:, None] - orbit.v * dth[:, None]) / th[:, None] ** 3
    return t, orbit.q, v, a, gap


def _orbit_time(red: JacobiReduction, orbit: Orbit, t0: float):
    n = orbit.dim
    s = orbit.s
    h = np.diff(s)

    if orbit.evaluator is not None:
        def tangents(ss):
            return orbit.at(ss)
    else:
        spline = CubicSpline(s, orbit.points, axis=0,
                             bc_type="periodic" if orbit.closed else "not-a-knot")

        def tangents(ss):
            return spline(ss), spline(ss, 1)

    def theta_at(ss):
        pts, tan = tangents(ss.ravel())
        th = red.phiE([pts[:, k] for k in range(n)], [tan[:, k] for k in range(n)])
        return np.reshape(th, ss.shape)

    nodes = s[:-1, None] + h[:, None] * GL_NODES[None, :]
    full = h * (theta_at(nodes) @ GL_WEIGHTS)
    left = s[:-1, None] + 0.5 * h[:, None] * GL_NODES[None, :]
    right = left + 0.5 * h[:, None]
    halves = 0.5 * h * ((theta_at(left) + theta_at(right)) @ GL_WEIGHTS)
    gap = float(np.sum(np.abs(full - halves)))
    if gap > TIME_TOL:
        raise UndersampledOrbitError(
            f"time quadrature changes by {gap:.2e} under step halving; sample the orbit densely")
    t = t0 + np.concatenate([[0.0], np.cumsum(halves)])
    pts, tan = tangents(s)
    th = np.atleast_1d(red.phiE([pts[:, k] for k in range(n)], [tan[:, k] for k in range(n)]))
    return t, pts, tan / th[:, None], None, gap


def reconstruct_time(red: JacobiReduction, orbit, t0: float = 0.0) -> Trajectory:
    """Lift an orbit of the reduced Lagrangian back to a motion in time.

    ``orbit`` is either a :class:`Trajectory` in an arbitrary parameter or an
    :class:`Orbit`; ``t = t0 + int phi_E dtau``.  The energy of the result is
    checked against ``E``.
    """
    if isinstance(orbit, Trajectory):
        t, q, v, a, gap = _trajectory_time(red, orbit, t0)
    elif isinstance(orbit, Orbit):
        t, q, v, a, gap = _orbit_time(red, orbit, t0)
    else:
        raise TypeError("orbit must be a Trajectory or an Orbit")
    n = q.shape[1]
    Gv = np.asarray(red.energy([q[:, k] for k in range(n)], [v[:, k] for k in range(n)]), float)
    resid = float(np.max(np.abs(Gv - red.E)))
    if resid > TIME_TOL:
        raise ConvergenceError(f"reconstructed motion misses the energy by {resid:.2e}")
    return Trajectory(t, q, v, a, source=f"time[{red.reduced.name}]",
                      meta={"energy_residual": resid, "halving_gap": gap})


# -- inverse problem -------------------------------------------------------------

class AntiderivativeI:
    """``I(rho) = int_{rho0}^{rho} G(x, c r) / r^2 dr`` along a fixed ray."""

    def __init__(self, G: EnergyFn, x, c, rho0, tol: float = QUAD_TOL):
        if np.any(np.asarray(D.primal(rho0)) <= 0):
            raise QuadratureError("lower limit rho0 must be positive")
        self.G = G
        self.x = list(x)
        self.c = list(c)
        self.rho0 = rho0
        self.tol = tol

    def integrand(self, r):
        return self.G(self.x, [ci * r for ci in self.c]) / (r * r)

    def derivative(self, rho):
        return self.integrand(rho)

    def __call__(self, rho):
        if np.any(np.asarray(D.primal(rho)) <= 0):
            raise QuadratureError("I(c, rho) needs rho > 0; the integrand blows up at 0")
        kind = input_kind(self.x + self.c + [rho, self.rho0])
        if kind == "array":
            arrays, shape = _broadcast_inputs(self.x + self.c + [rho, self.rho0])
            n = len(self.x)
            flat = [a.ravel() for a in arrays]

            def f(r, idx):
                xs = [a[idx] for a in flat[:n]]
                cs = [a[idx] for a in flat[n:2 * n]]
                return np.asarray(self.G(xs, [ci * r for ci in cs]), float) / (r * r)

            return N.simpson_batch(f, flat[2 * n + 1], flat[2 * n], tol=self.tol).reshape(shape)
        return N.simpson(self.integrand, self.rho0, rho, tol=self.tol)


def antiderivative_I(G: EnergyFn, x, c, rho0: float, tol: float = QUAD_TOL) -> AntiderivativeI:
    return AntiderivativeI(G, x, c, rho0, tol)


def _metric_norm(metric, q, v):
    n = len(v)
    if metric is None:
        gvv = sum(v[i] * v[i] for i in range(n))
    else:
        g = metric(q) if isinstance(metric, SymTensorField) else metric(q)
        gvv = 0.0
        for i in range(n):
            for j in range(n):
                gvv = gvv + g[i][j] * v[i] * v[j]
    if np.any(np.asarray(D.primal(gvv)) == 0):
        raise DegenerateInputError("velocity lies on the null cone of the bookkeeping metric")
    return D.sqrt(D.absolute(gvv))


def inverse_jacobi(L_h: LagrangianFn, G: EnergyFn, E: float, metric=None, seed: float = 1.0,
                   rho0: float | None = None, tol: float = QUAD_TOL,
                   name: str | None = None) -> LagrangianFn:
    """Lagrangian whose energy function is ``G`` and whose Jacobi Lagrangian at ``E`` is ``L_h``.

    ``L = s [I(c, s) - I(c, s/phi)] + L_h - E phi`` with ``s = sqrt|g v v|``,
    ``c = v/s`` and ``phi`` the positive root of ``G(q, v/phi) = E``.  The
    lower quadrature limit ``rho0`` defaults to ``s`` at each point (any
    positive value gives the same result up to quadrature error).
    """
    if not L_h.homogeneous:
        raise LagrangianError(f"{L_h.name} is not declared homogeneous of degree one")
    if G.dof != L_h.dof:
        raise DimensionError("energy function and homogeneous Lagrangian differ in dimension")
    E = float(E)
    seed = float(seed)
    n = L_h.dof

    def value(q, v, t, phi):
        s = _metric_norm(metric, q, v)
        c = [vi / s for vi in v]
        lower = D.primal(s) if rho0 is None else rho0
        anti = AntiderivativeI(G, q, c, lower, tol)
        upper = 0.0 if rho0 is None and input_kind([s]) != "dual" else anti(s)
        return s * (upper - anti(s / phi)) + L_h(q, v, t) - E * phi

    def scalar_dual(vals):
        q, v, t = vals[:n], vals[n:2 * n], vals[2 * n]
        _check_direction(v)
        phi = _phi_dual(G, E, q, v, seed)
        return value(q, v, t, phi)

    def func(q, v, t):
        vals = list(q) + list(v) + [t]
        if input_kind(vals) == "dual":
            return per_point(scalar_dual, vals)
        phi = solve_theta_prime(G, E, q, v, seed)
        return value(list(q), list(v), t, phi)

    return LagrangianFn(func, n, time_independent=True, name=name or f"InverseJacobi[{L_h.name}]",
                        domain=L_h.domain, energy=G, check=False,
                        meta={"edge": "inverse_jacobi", "E": E, "seed": seed})
