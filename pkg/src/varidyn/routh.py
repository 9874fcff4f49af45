"""Routh reduction of a cyclic coordinate and the inverse Routh procedure.

Conventions: for a Lagrangian with ``dof = n + 1`` and cyclic slot ``i0`` the
reduced Lagrangian takes the ``n`` remaining coordinates and velocities.  A
momentum map ``P(q_rest, w, v_rest, t)`` receives the remaining coordinates and
velocities together with the cyclic velocity ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dual as D
from . import numerics as N
from .errors import DimensionError, LagrangianError, PreconditionError
from .integrate import GL_NODES, GL_WEIGHTS, Trajectory
from .lagrangian import (Domain, EnergyFn, LagrangianFn, envelope_jet, input_kind, per_point,
                         _broadcast_inputs)

CYCLIC_TOL = 1e-10
QUAD_TOL = 1e-11


def _insert(xs, i0, value):
    xs = list(xs)
    return xs[:i0] + [value] + xs[i0:]


def _drop(xs, i0):
    xs = list(xs)
    return xs[:i0] + xs[i0 + 1:]


def momentum_map(L: LagrangianFn, i0: int, momentum: Callable | None = None) -> Callable:
    """``P(q_rest, w, v_rest, t)``: closed form if attached, else ``dL/dv^{i0}``."""
    if momentum is None:
        momentum = L.momenta.get(i0)
    if momentum is not None:
        return momentum

    def P(q_rest, w, v_rest, t):
        if isinstance(w, D.Dual) or any(isinstance(x, D.Dual) for x in list(q_rest) + list(v_rest)):
            raise LagrangianError(
                "dual evaluation of a derived momentum map needs third derivatives; "
                "attach a closed-form momentum")
        # one-variable second-order jet in w gives dL/dw as its gradient
        wd = D.Dual(w, np.ones((1,) + np.shape(w)), np.zeros((1, 1) + np.shape(w)))
        y = L(_insert(q_rest, i0, 0.0), _insert(v_rest, i0, wd), t)
        return y.grad[0] if isinstance(y, D.Dual) else 0.0 * w

    P.derived_from = L
    return P


def _momentum_residual(L, i0, P, p0, q_rest, v_rest, t):
    """``fun(w, idx) -> (P - p0, dP/dw)`` for the root solver."""
    derived = L is not None and getattr(P, "derived_from", None) is L
    arrays, shape = _broadcast_inputs(list(q_rest) + list(v_rest) + [t])
    m = len(q_rest)
    scalar = shape == ()

    def pick(idx):
        if scalar:
            return arrays
        return [a[idx] for a in arrays]

    def fun(w, idx):
        vals = pick(idx)
        qs, vs, ts = vals[:m], vals[m:2 * m], vals[2 * m]
        if scalar:
            w = float(w[0])
        if derived:
            wd = D.Dual(w, np.ones((1,) + np.shape(w)), np.zeros((1, 1) + np.shape(w)))
            y = L(_insert(qs, i0, 0.0), _insert(vs, i0, wd), ts)
            if not isinstance(y, D.Dual):
                return np.zeros(np.size(w)) - p0, np.zeros(np.size(w))
            return np.atleast_1d(y.grad[0] - p0), np.atleast_1d(y.hess[0, 0])
        wd = D.Dual(w, np.ones((1,) + np.shape(w)), None)
        y = P(qs, wd, vs, ts)
        if not isinstance(y, D.Dual):
            return np.atleast_1d(y - p0 + 0.0 * w), np.zeros(np.size(w))
        return np.atleast_1d(y.val - p0), np.atleast_1d(y.grad[0])

    return fun, shape


def _solve_w(L, i0, P, p0, q_rest, v_rest, t, seed):
    fun, shape = _momentum_residual(L, i0, P, p0, q_rest, v_rest, t)
    size = None if shape == () else int(np.prod(shape))
    if size is not None:
        flat = fun

        def fun(w, idx):  # noqa: F811 - flatten batch shape for the solver
            return flat(w, np.unravel_index(idx, shape))
    w = N.solve_root(fun, seed, size, ftol=1e-11 * (1 + abs(p0)))
    return w if size is None else np.reshape(w, shape)


def solve_cyclic_velocity(L: LagrangianFn, i0: int, p0: float, q, v_rest, t: float = 0.0,
                          seed: float = 0.0, momentum: Callable | None = None):
    """Cyclic velocity ``w`` with ``P(q, w, v_rest, t) = p0``.

    ``q`` may list all ``dof`` coordinates (the cyclic one is ignored) or only
    the ``dof - 1`` remaining ones.  Arrays give a batched solve.
    """
    if not 0 <= i0 < L.dof:
        raise DimensionError(f"cyclic index {i0} outside 0..{L.dof - 1}")
    q = list(q)
    if len(q) == L.dof:
        q = _drop(q, i0)
    if len(q) != L.dof - 1 or len(v_rest) != L.dof - 1:
        raise DimensionError("expected the remaining coordinates and velocities")
    P = momentum_map(L, i0, momentum)
    return _solve_w(L, i0, P, p0, q, list(v_rest), t, float(seed))


@dataclass(frozen=True)
class RouthReduction:
    """Reduced Lagrangian plus what is needed to rebuild the cyclic motion."""

    reduced: LagrangianFn
    cyclic_index: int
    p0: float
    seed: float
    original: LagrangianFn
    momentum: Callable

    def phi(self, q, v_rest, t=0.0):
        """Cyclic velocity on the reduced state (the recorded branch)."""
        return _solve_w(self.original, self.cyclic_index, self.momentum, self.p0, list(q),
                        list(v_rest), t, self.seed)


def check_cyclic(L: LagrangianFn, i0: int, points: int = 20, seed: int = 0):
    """Spot check ``|dL/dq^{i0}| < 1e-10`` on random admissible points."""
    dom = L.domain or Domain.cube(L.dof)
    rng = np.random.default_rng(seed)
    Q, V, T = dom.sample(rng, 10 * points)
    good = 0
    for q, v, t in zip(Q, V, T):
        if good >= points:
            break
        try:
            g = L.jet(list(q), list(v), t, order=1).q[i0]
        except Exception:  # inadmissible sample point
            continue
        if abs(g) >= CYCLIC_TOL:
            raise LagrangianError(
                f"coordinate {i0} of {L.name} is not cyclic: dL/dq = {g:.3e} at q={q.tolist()}")
        good += 1
    if good == 0:
        raise LagrangianError(f"no admissible spot-check points for {L.name}")


def routh_reduce(L: LagrangianFn, i0: int, p0: float, seed: float = 0.0,
                 momentum: Callable | None = None, energy: EnergyFn | None = None,
                 check: bool = True, name: str | None = None) -> RouthReduction:
    """Eliminate the cyclic coordinate ``i0`` at conserved momentum ``p0``.

    Values come from solving for the cyclic velocity; derivative queries use
    the envelope property of the Routh function, so no re-solving happens
    under dual arithmetic.
    """
    if L.dof < 2:
        raise DimensionError("Routh reduction needs at least two degrees of freedom")
    if check:
        check_cyclic(L, i0)
    P = momentum_map(L, i0, momentum)
    p0 = float(p0)
    seed = float(seed)

    def routh_fn(qz, vz, t, w):
        return L(_insert(qz, i0, 0.0), _insert(vz, i0, w), t) - w * p0

    def scalar_dual(vals):
        n = len(vals) // 2
        qs, vs, t = vals[:n], vals[n:2 * n], vals[2 * n]
        prim = [float(D.primal(x)) for x in vals]
        w0 = _solve_w(L, i0, P, p0, prim[:n], prim[n:2 * n], prim[2 * n], seed)

        def F(z, w):
            return routh_fn(z[:n], z[n:2 * n], z[2 * n], w)

        val, g, H = envelope_jet(F, prim, w0)
        return D.Dual.compose(val, g, H, vals)

    def func(q, v, t):
        vals = list(q) + list(v) + [t]
        kind = input_kind(vals)
        if kind == "dual":
            return per_point(scalar_dual, vals)
        w = _solve_w(L, i0, P, p0, q, v, t, seed)
        return routh_fn(q, v, t, w)

    dom = L.domain.drop(i0) if L.domain is not None else None
    reduced = LagrangianFn(func, L.dof - 1, time_independent=L.time_independent,
                           name=name or f"Routh[{L.name}, p0={p0:g}]", domain=dom,
                           energy=energy, check=False,
                           meta={"edge": "routh", "p0": p0, "seed": seed})
    return RouthReduction(reduced, i0, p0, seed, L, P)


def drift_reconstruct(red: RouthReduction, reduced_solution: Trajectory,
                      q0_initial: float = 0.0) -> Trajectory:
    """Add the cyclic coordinate to a solution of the reduced equations.

    The cyclic velocity solves the momentum equation along the known path; its
    integral uses Gauss-Legendre quadrature on the trajectory's Hermite
    interpolant, and its time derivative follows by implicit differentiation.
    """
    traj = reduced_solution
    i0 = red.cyclic_index
    nodes, h = traj.step_nodes()
    qn, vn = traj.interpolate(nodes.ravel())
    t_nodes = nodes.ravel()
    w_nodes = red.phi([qn[:, k] for k in range(traj.dof)], [vn[:, k] for k in range(traj.dof)],
                      t_nodes)
    incr = h * (np.reshape(w_nodes, nodes.shape) @ GL_WEIGHTS)
    x0 = q0_initial + np.concatenate([[0.0], np.cumsum(incr)])
    Q = [traj.q[:, k] for k in range(traj.dof)]
    Vv = [traj.v[:, k] for k in range(traj.dof)]
    w = red.phi(Q, Vv, traj.t)
    a0 = _cyclic_acceleration(red, traj, np.atleast_1d(w))
    q = np.column_stack(_insert([traj.q[:, k] for k in range(traj.dof)], i0, x0))
    v = np.column_stack(_insert(Vv, i0, np.atleast_1d(w)))
    a = None
    if traj.a is not None:
        a = np.column_stack(_insert([traj.a[:, k] for k in range(traj.dof)], i0, a0))
    return Trajectory(traj.t, q, v, a, source=f"{traj.source}+drift", tol=traj.tol,
                      meta=dict(traj.meta, drift_p0=red.p0))


def _cyclic_acceleration(red: RouthReduction, traj: Trajectory, w):
    """``dw/dt = -(P_q qdot + P_v a + P_t) / P_w`` along the reduced solution."""
    L, i0 = red.original, red.cyclic_index
    out = np.zeros(len(traj))
    acc = traj._accel()
    n1 = L.dof
    for k in range(len(traj)):
        q = _insert(traj.q[k], i0, 0.0)
        v = _insert(traj.v[k], i0, float(w[k]))
        j = L.jet(q, v, float(traj.t[k]))
        row = np.asarray(j.hess[n1 + i0], float)  # d(dL/dw)/d(q, v, t)
        Pq = np.delete(row[:n1], i0)
        Pv = np.delete(row[n1:2 * n1], i0)
        Pw = row[n1 + i0]
        Pt = row[2 * n1]
        out[k] = -(Pq @ traj.v[k] + Pv @ acc[k] + Pt) / Pw
    return out


def inverse_routh(L_red: LagrangianFn, P0: Callable, p0: float, seed: float = 0.0,
                  i0: int = 0, tol: float = QUAD_TOL, cyclic_velocity_range=None,
                  energy: EnergyFn | None = None, name: str | None = None) -> LagrangianFn:
    """Rebuild a Lagrangian with cyclic slot ``i0`` from ``(L_red, P0, p0)``.

    ``L(q, v) = L_red + phi p0 + int_phi^{v_i0} P0 dk`` where ``phi`` solves
    ``P0(q, phi, v, t) = p0`` from ``seed``.  The result carries ``P0`` as its
    closed-form momentum in slot ``i0``.
    """
    p0 = float(p0)
    seed = float(seed)
    n = L_red.dof

    def phi_of(qr, vr, t):
        fun, shape = _momentum_residual(None, i0, P0, p0, qr, vr, t)
        size = None if shape == () else int(np.prod(shape))
        if size is not None:
            flat = fun

            def fun(w, idx):  # noqa: F811
                return flat(w, np.unravel_index(idx, shape))
        w = N.solve_root(fun, seed, size, ftol=1e-11 * (1 + abs(p0)))
        return w if size is None else np.reshape(w, shape)

    def scalar_float(qr, w, vr, t):
        phi = phi_of(qr, vr, t)
        integral = N.simpson(lambda k: P0(qr, k, vr, t), phi, w, tol=tol)
        return L_red(qr, vr, t) + phi * p0 + integral

    def batch(qr, w, vr, t):
        arrays, shape = _broadcast_inputs(list(qr) + [w] + list(vr) + [t])
        qa, wa, va, ta = arrays[:n], arrays[n], arrays[n + 1:2 * n + 1], arrays[2 * n + 1]
        phi = phi_of(qa, va, ta)
        flat = [x.ravel() for x in qa + va] + [ta.ravel()]

        def integrand(k, idx):
            sel = [x[idx] for x in flat]
            return np.asarray(P0(sel[:n], k, sel[n:2 * n], sel[2 * n]), float) + 0.0 * k

        integral = N.simpson_batch(integrand, np.ravel(phi), wa.ravel(), tol=tol).reshape(shape)
        return L_red(qa, va, ta) + phi * p0 + integral

    def scalar_dual(vals):
        qd, w, vd, t = vals[:n], vals[n], vals[n + 1:2 * n + 1], vals[2 * n + 1]
        prim = [float(D.primal(x)) for x in vals]
        phi0 = phi_of(prim[:n], prim[n + 1:2 * n + 1], prim[2 * n + 1])
        wd = D.Dual(phi0, np.ones(1), None)
        slope = float(D.primal(P0(prim[:n], wd, prim[n + 1:2 * n + 1], prim[2 * n + 1]).grad[0]))
        phi = N.lift_root(lambda x: P0(qd, x, vd, t) - p0, phi0, slope)
        integral = N.simpson(lambda k: P0(qd, k, vd, t), phi, w, tol=tol)
        return L_red(qd, vd, t) + phi * p0 + integral

    def func(q, v, t):
        qr, vr, w = _drop(q, i0), _drop(v, i0), v[i0]
        vals = qr + [w] + vr + [t]
        kind = input_kind(vals)
        if kind == "dual":
            return per_point(scalar_dual, vals)
        if kind == "array":
            return batch(qr, w, vr, t)
        return scalar_float(qr, w, vr, t)

    dom = None
    if L_red.domain is not None and cyclic_velocity_range is not None:
        dom = L_red.domain.insert(i0, (0.0, 1.0), cyclic_velocity_range)
    return LagrangianFn(func, n + 1, time_independent=L_red.time_independent,
                        name=name or f"InverseRouth[{L_red.name}]", domain=dom,
                        energy=energy, momenta={i0: P0}, check=dom is not None,
                        meta={"edge": "inverse_routh", "p0": p0, "seed": seed})


def require_coupling(p0: float, E: float, c: float, tol: float = 1e-12):
    """The momentum-energy coupling ``p0*c = -E`` tying the lift to the Newtonian side."""
    if abs(p0 * c + E) > tol * (1 + abs(E)):
        raise PreconditionError(
            f"momentum-energy coupling p0*c = -E violated: p0*c = {p0 * c:g}, E = {E:g}")
