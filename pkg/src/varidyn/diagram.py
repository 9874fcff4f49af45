"""Executable reduction/lift loops and the four-corner commuting diagram.

Four dynamics take part:

* ``newtonian``: the Newtonian Lagrangian on ``n`` dof (time ``t``);
* ``sqrt``: the geodesic Lagrangian in coordinate time on ``n`` dof;
* ``quadratic``: the affine geodesic Lagrangian on ``n+1`` dof;
* ``homogeneous``: the reparametrization-invariant geodesic Lagrangian on ``n+1``
  dof, with the Jacobi orbit Lagrangian on ``n`` dof as its spatial shadow.

Each loop chains reductions and lifts and compares every intermediate
Lagrangian with its closed form on a quasi-random grid (scaled error
``|a - b| / (1 + |b|)``).  Orbits integrated in every corner from matched initial
data are compared with the directly integrated Newtonian orbit.
"""

from __future__ import annotations

import json
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from . import dual as D
from .errors import EdgeError, StepUnderflowError, VaridynError
from .integrate import (Trajectory, integrate_el, integrate_gauge_fixed, monitor_conserved,
                        orbit_distance, orbit_resample, truncate)
from .jacobi import inverse_jacobi, jacobi_reduce, reconstruct_time
from .lagrangian import LagrangianFn
from .routh import drift_reconstruct, inverse_routh, require_coupling, routh_reduce
from .scenario import ScenarioSpec
from .systems import (GeodesicSelector, closed_form_jacobi, cyclic_momentum, geodesic_lagrangian,
                      newtonian_energy, newtonian_lagrangian, projected_conservation,
                      quadratic_energy, reparametrize_time, routh_closed_form, stationary_energy)

LOOPS = ("loop77", "loop78", "loop85", "loop86")
DEFAULT_POINTS = 10_000
SPOT_POINTS = 50
LOOP_CORNERS = {
    "loop77": ("newtonian", "jacobi", "sqrt"),
    "loop78": ("sqrt", "jacobi", "newtonian"),
    "loop85": ("sqrt", "homogeneous", "quadratic", "routh", "newtonian"),
    "loop86": ("newtonian", "quadratic", "homogeneous", "sqrt"),
}


# -- report ------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    tol: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.value) and self.value < self.tol)

    def to_dict(self):
        return {"value": float(self.value), "tol": float(self.tol), "passed": self.passed,
                **({"detail": self.detail} if self.detail else {})}


@dataclass
class DiagramReport:
    """Per-edge discrepancies, per-corner orbit distances, drifts and checks."""

    scenario: str
    seed: int
    points: int
    edges: dict = field(default_factory=dict)      # loop -> list[Check]
    orbits: dict = field(default_factory=dict)     # corner -> Check
    drifts: dict = field(default_factory=dict)     # quantity -> Check
    checks: dict = field(default_factory=dict)     # name -> Check

    @property
    def passed(self) -> bool:
        items = [c for cs in self.edges.values() for c in cs]
        items += list(self.orbits.values()) + list(self.drifts.values())
        items += list(self.checks.values())
        return all(c.passed for c in items)

    def failures(self) -> list[str]:
        out = [f"{loop}:{c.name}" for loop, cs in self.edges.items() for c in cs if not c.passed]
        for group, d in (("orbit", self.orbits), ("drift", self.drifts), ("check", self.checks)):
            out += [f"{group}:{k}" for k, c in d.items() if not c.passed]
        return out

    def merge(self, other: "DiagramReport"):
        self.edges.update(other.edges)
        self.orbits.update(other.orbits)
        self.drifts.update(other.drifts)
        self.checks.update(other.checks)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "points": self.points,
            "passed": self.passed,
            "edges": {loop: {c.name: c.to_dict() for c in cs} for loop, cs in self.edges.items()},
            "orbits": {k: c.to_dict() for k, c in self.orbits.items()},
            "drifts": {k: c.to_dict() for k, c in self.drifts.items()},
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


# -- comparison grids ---------------------------------------------------------

def _sobol(dim: int, count: int, seed: int) -> np.ndarray:
    m = max(4, int(math.ceil(math.log2(max(count, 2)))))
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)


def _scale(u, lo, hi):
    return lo + u * (hi - lo)


def _admissible_take(build, dim, points, seed, what):
    """Draw Sobol points until ``points`` admissible ones are collected."""
    need = points
    for grow in range(6):
        raw = _sobol(dim, 2 * need * 2 ** grow, seed)
        sample, ok = build(raw)
        idx = np.flatnonzero(ok)
        if idx.size >= points:
            idx = idx[:points]
            return [x[idx] for x in sample]
    raise EdgeError(what, VaridynError(f"fewer than {points} admissible grid points in the box"))


def _cone(spec: ScenarioSpec, q, vc):
    """``eps (g00 + 2 g0k v^k/c + g_kl v^k v^l / c^2)`` for coordinate velocities."""
    met, c, n = spec.metric, spec.c, spec.n
    with D.lenient():
        g = met.g(q)
        s = g[0][0] + 2 * sum(g[0][k + 1] * vc[k] for k in range(n)) / c
        s = s + sum(g[i + 1][j + 1] * vc[i] * vc[j] for i in range(n) for j in range(n)) / c ** 2
    return spec.selector.epsilon * np.asarray(s, float)


def _lifted_norm(spec: ScenarioSpec, q, v):
    """``eps g u u`` of the lift ``u = (w, v)`` at cyclic momentum ``p0 = -E/c``.

    Equals ``eps (E^2 / (c^2 g00) - gamma v v)``; the lifted Lagrangians are
    only defined where it is positive (it is ``m^2 c^2`` along solutions).
    """
    met, c, n = spec.metric, spec.c, spec.n
    with D.lenient():
        gam = met.gamma(q)
        gvv = sum(gam[i][j] * v[i] * v[j] for i in range(n) for j in range(n))
        s = spec.E ** 2 / (c ** 2 * met.g00(q)) - gvv
    return spec.selector.epsilon * np.asarray(s, float)


def _static_ok(spec: ScenarioSpec, q):
    m, c, eps, E = spec.selector.m, spec.c, spec.selector.epsilon, spec.E
    with D.lenient():
        g00 = np.asarray(spec.metric.g00(q), float) + 0.0 * q[0]
        gap = spec.calE - np.asarray(spec.newtonian.V(q), float) + 0.0 * q[0]
    margin = spec.margin
    radial = E ** 2 / c ** 2 - m ** 2 * c ** 2 * eps * g00
    return (g00 > margin) & (gap > margin) & (radial > margin)


def newtonian_grid(spec: ScenarioSpec, points: int, seed: int):
    """``(q, v)`` in the scenario boxes with ``calE - V`` and ``g00`` bounded away from 0."""
    n = spec.n

    def build(raw):
        q = [_scale(raw[:, k], spec.q_box[0][k], spec.q_box[1][k]) for k in range(n)]
        v = [_scale(raw[:, n + k], spec.v_box[0][k], spec.v_box[1][k]) for k in range(n)]
        speed = np.sqrt(sum(x * x for x in v))
        return q + v, (_static_ok(spec, q) & (speed > spec.margin)
                       & (_lifted_norm(spec, q, v) > spec.margin))

    out = _admissible_take(build, 2 * n, points, seed, "newtonian-grid")
    return out[:n], out[n:]


def coordinate_grid(spec: ScenarioSpec, points: int, seed: int):
    """``(q, v)`` with coordinate-time velocities strictly inside the causal cone."""
    n = spec.n

    def build(raw):
        q = [_scale(raw[:, k], spec.q_box[0][k], spec.q_box[1][k]) for k in range(n)]
        v = [_scale(raw[:, n + k], spec.vc_box[0][k], spec.vc_box[1][k]) for k in range(n)]
        return q + v, _static_ok(spec, q) & (_cone(spec, q, v) > spec.margin)

    out = _admissible_take(build, 2 * n, points, seed + 1, "coordinate-grid")
    return out[:n], out[n:]


def lifted_grid(spec: ScenarioSpec, points: int, seed: int):
    """``(xi, u)`` on ``n+1`` dof with ``u = lam (c, v_coord)`` inside the cone."""
    n, c = spec.n, spec.c
    lo, hi = spec.lift_scale

    def build(raw):
        x0 = _scale(raw[:, 0], -1.0, 1.0)
        q = [_scale(raw[:, 1 + k], spec.q_box[0][k], spec.q_box[1][k]) for k in range(n)]
        lam = _scale(raw[:, n + 1], lo, hi)
        vc = [_scale(raw[:, n + 2 + k], spec.vc_box[0][k], spec.vc_box[1][k]) for k in range(n)]
        u = [lam * c] + [lam * x for x in vc]
        return [x0] + q + u, _static_ok(spec, q) & (_cone(spec, q, vc) > spec.margin)

    out = _admissible_take(build, 2 * n + 2, points, seed + 2, "lifted-grid")
    return out[:n + 1], out[n + 1:]


def discrepancy(a, b) -> float:
    """Max of ``|a - b| / (1 + |b|)``; NaN anywhere counts as a failure."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = np.abs(a - b) / (1 + np.abs(b))
    return float(np.max(d)) if np.all(np.isfinite(d)) else math.inf


# -- the pieces of the diagram -------------------------------------------------

class Pieces:
    """Lazily built Lagrangians, grids and corner orbits shared by all loops."""

    def __init__(self, spec: ScenarioSpec, points: int = DEFAULT_POINTS, seed: int = 0):
        self.spec = spec
        self.points = points
        self.seed = seed
        self._cache = {}

    def get(self, key, build: Callable):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # Lagrangians
    @property
    def newtonian(self) -> LagrangianFn:
        return self.get("N", lambda: newtonian_lagrangian(self.spec.newtonian))

    @property
    def sqrt(self) -> LagrangianFn:
        s = self.spec
        return self.get("S", lambda: geodesic_lagrangian(s.metric, s.selector, "sqrt"))

    @property
    def quadratic(self) -> LagrangianFn:
        s = self.spec
        return self.get("Q", lambda: geodesic_lagrangian(s.metric, s.selector, "quadratic"))

    @property
    def homogeneous(self) -> LagrangianFn:
        s = self.spec
        return self.get("H", lambda: geodesic_lagrangian(s.metric, s.selector,
                                                         "homogeneous_sqrt"))

    @property
    def newtonian_jacobi(self):
        s = self.spec
        return self.get("NJ", lambda: closed_form_jacobi("newtonian", s.newtonian, s.calE))

    @property
    def stationary_jacobi(self):
        s = self.spec
        return self.get("SJ", lambda: closed_form_jacobi("stationary_sqrt",
                                                         (s.metric, s.selector), s.E))

    @property
    def routh_closed(self) -> LagrangianFn:
        return self.get("R", lambda: routh_closed_form(self.spec.metric, self.spec.p0))

    # grids
    @property
    def grid_n(self):
        return self.get("gn", lambda: newtonian_grid(self.spec, self.points, self.seed))

    @property
    def grid_c(self):
        return self.get("gc", lambda: coordinate_grid(self.spec, self.points, self.seed))

    @property
    def grid_l(self):
        return self.get("gl", lambda: lifted_grid(self.spec, self.points, self.seed))

    # matched initial data
    @property
    def cyclic_velocity0(self) -> float:
        """``u^0`` making the cyclic momentum equal ``p0`` at the initial point."""
        s = self.spec
        g = s.metric.g.matrix(s.q0)
        return float((-s.p0 - g[0, 1:] @ s.v0) / g[0, 0])


def _edge(name: str, fn: Callable, tol: float, detail: dict | None = None) -> Check:
    try:
        value = fn()
    except EdgeError:
        raise
    except (VaridynError, ArithmeticError) as exc:
        raise EdgeError(name, exc) from exc
    return Check(name, value, tol, detail or {})


def _adopt(name, numeric: LagrangianFn, closed: LagrangianFn, grid, tol, **closed_forms):
    """Attach closed-form energy/momenta to a numerically lifted Lagrangian.

    Only done after the lifted values agree with the closed form on a spot
    sample; later edges then avoid differentiating through quadrature.
    """
    q, v = grid
    q = [x[:SPOT_POINTS] for x in q]
    v = [x[:SPOT_POINTS] for x in v]
    err = discrepancy(numeric(q, v, 0.0), closed(q, v, 0.0))
    if not err < tol:
        raise EdgeError(name, VaridynError(
            f"spot check before adopting closed forms failed: {err:.3e}"))
    return numeric.replace(**closed_forms)


def _compare(A: LagrangianFn, B: LagrangianFn, grid) -> float:
    q, v = grid
    return discrepancy(A(q, v, 0.0), B(q, v, 0.0))


def _loop77(P: Pieces, tol: float) -> list[Check]:
    s = P.spec
    out = []
    NJ, _ = P.newtonian_jacobi
    SJ, _ = P.stationary_jacobi
    out.append(_edge("jacobi(newtonian) = closed form", lambda: _compare(
        jacobi_reduce(P.newtonian, s.calE).reduced, NJ, P.grid_n), tol))
    out.append(_edge("newtonian jacobi = stationary jacobi", lambda: _compare(NJ, SJ, P.grid_n),
                     tol, {"identification": "e = gamma, A = -(g0k/g00) E / coupling, "
                                             "V = calE + eps m^2 c^2 / 2 - E^2 / (2 g00 c^2)"}))
    out.append(_edge("inverse_jacobi(jacobi, G, E) = sqrt", lambda: _compare(
        inverse_jacobi(SJ, stationary_energy(s.metric, s.selector), s.E), P.sqrt, P.grid_c),
        tol, {"auxiliary": "(G, E) = energy of the coordinate-time geodesic Lagrangian, E"}))
    return out


def _loop78(P: Pieces, tol: float) -> list[Check]:
    s = P.spec
    out = []
    NJ, _ = P.newtonian_jacobi
    SJ, _ = P.stationary_jacobi
    out.append(_edge("jacobi(sqrt) = closed form", lambda: _compare(
        jacobi_reduce(P.sqrt, s.E).reduced, SJ, P.grid_n), tol))
    out.append(_edge("stationary jacobi = newtonian jacobi", lambda: _compare(SJ, NJ, P.grid_n),
                     tol))
    out.append(_edge("inverse_jacobi(jacobi, calG, calE) = newtonian", lambda: _compare(
        inverse_jacobi(NJ, newtonian_energy(s.newtonian), s.calE), P.newtonian, P.grid_n),
        tol, {"auxiliary": "(calG, calE) = Newtonian energy function and its value"}))
    return out


def _loop85(P: Pieces, tol: float) -> list[Check]:
    s = P.spec
    c = s.c
    out = []
    Lh = reparametrize_time(P.sqrt, c)
    out.append(_edge("reparametrize(sqrt) = homogeneous", lambda: _compare(
        Lh, P.homogeneous, P.grid_l), tol))
    lifted = {}

    def lift():
        Lt = inverse_jacobi(Lh, quadratic_energy(s.metric), s.C)
        err = _compare(Lt, P.quadratic, P.grid_l)
        lifted["L"] = _adopt("inverse_jacobi(homogeneous, Gq, C) = quadratic", Lt, P.quadratic,
                             P.grid_l, tol, energy=quadratic_energy(s.metric),
                             momenta={0: cyclic_momentum(s.metric)})
        return err

    out.append(_edge("inverse_jacobi(homogeneous, Gq, C) = quadratic", lift, tol,
                     {"auxiliary": "(Gq, C) = -1/2 g u u, -1/2 eps m^2 c^2"}))

    def routh():
        red = routh_reduce(lifted["L"], 0, s.p0, seed=s.E / c)
        return _compare(red.reduced, P.routh_closed, P.grid_n)

    out.append(_edge("routh(quadratic, p0) = closed form", routh, tol,
                     {"auxiliary": "(P0, p0) with p0 c = -E"}))
    offset = s.routh_offset
    out.append(_edge("routh closed form - const = newtonian", lambda: discrepancy(
        np.asarray(P.routh_closed(*P.grid_n, 0.0)) - offset,
        P.newtonian(*P.grid_n, 0.0)), tol, {"const": offset}))
    return out


def _loop86(P: Pieces, tol: float) -> list[Check]:
    s = P.spec
    out = []
    offset = s.routh_offset
    N = P.newtonian
    shifted = LagrangianFn(lambda q, v, t: N(q, v, t) + offset, N.dof, time_independent=True,
                           name=f"{N.name}+const", domain=N.domain, check=False)
    lifted = {}

    def lift():
        Lt = inverse_routh(shifted, cyclic_momentum(s.metric), s.p0, seed=s.E / s.c)
        err = _compare(Lt, P.quadratic, P.grid_l)
        lifted["L"] = _adopt("inverse_routh(newtonian + const, P0, p0) = quadratic", Lt,
                             P.quadratic, P.grid_l, tol, energy=quadratic_energy(s.metric))
        return err

    out.append(_edge("inverse_routh(newtonian + const, P0, p0) = quadratic", lift, tol,
                     {"auxiliary": "(P0, p0) = -g00 v0 - g0k v^k, -E/c", "const": offset}))
    out.append(_edge("jacobi(quadratic, C) = homogeneous", lambda: _compare(
        jacobi_reduce(lifted["L"], s.C).reduced, P.homogeneous, P.grid_l), tol))

    def same():
        q, v = P.grid_c
        n = s.n
        x = [np.zeros_like(q[0])] + list(q)
        u = [np.full_like(q[0], s.c)] + list(v)
        return discrepancy(P.homogeneous(x, u, 0.0), P.sqrt(q, v, 0.0))

    out.append(_edge("homogeneous at x'^0 = c equals sqrt", same, tol))
    return out


_LOOP_FNS = {"loop77": _loop77, "loop78": _loop78, "loop85": _loop85, "loop86": _loop86}


# -- orbits ------------------------------------------------------------------

class Corners:
    """Trajectories integrated from matched initial data in every corner."""

    def __init__(self, P: Pieces):
        self.P = P
        self.spec = P.spec
        self.tol = self.spec.tolerances["integrate"]
        self._traj = {}

    def traj(self, corner: str) -> Trajectory:
        if corner not in self._traj:
            try:
                self._traj[corner] = getattr(self, f"_{corner}")()
            except EdgeError:
                raise
            except (VaridynError, ArithmeticError) as exc:
                raise EdgeError(f"orbit:{corner}", exc) from exc
        return self._traj[corner]

    def orbit(self, corner: str):
        s = self.spec
        traj = self.traj(corner)
        idx = list(range(1, s.n + 1)) if traj.dof == s.n + 1 else None
        return orbit_resample(traj, idx)

    def _window(self):
        return self.spec.t0, self.spec.t1

    def _newtonian(self):
        s = self.spec
        return integrate_el(self.P.newtonian, s.q0, s.v0, *self._window(), tol=self.tol)

    def _jacobi(self):
        s = self.spec
        # the Newtonian time-rate keeps the parameter equal to Newtonian time
        NJ, phi = self.P.newtonian_jacobi
        return integrate_gauge_fixed(NJ, s.q0, s.v0, *self._window(), gauge=phi, tol=self.tol)

    def _quadratic(self):
        s = self.spec
        x0 = np.concatenate([[0.0], s.q0])
        u0 = np.concatenate([[self.P.cyclic_velocity0], s.v0])
        return integrate_el(self.P.quadratic, x0, u0, *self._window(), tol=self.tol)

    def routh_reduction(self):
        s = self.spec
        return self.P.get("routh_red", lambda: routh_reduce(self.P.quadratic, 0, s.p0,
                                                             seed=s.E / s.c))

    def _routh(self):
        s = self.spec
        return integrate_el(self.routh_reduction().reduced, s.q0, s.v0, *self._window(),
                            tol=self.tol)

    def _sqrt(self):
        s = self.spec
        lifted = drift_reconstruct(self.routh_reduction(), self.traj("routh"))
        t_end = float(lifted.q[-1, 0]) / s.c
        vc0 = s.c * s.v0 / self.P.cyclic_velocity0
        return integrate_el(self.P.sqrt, s.q0, vc0, 0.0, t_end, tol=self.tol)

    def _homogeneous(self):
        s = self.spec
        m, c, eps = s.selector.m, s.c, s.selector.epsilon

        def affine(x, xp):
            g = s.metric.g(list(x[1:]))
            gxx = sum(g[a][b] * xp[a] * xp[b] for a in range(s.n + 1) for b in range(s.n + 1))
            return D.sqrt(eps * gxx) / (m * c)

        affine.__name__ = "phi_C"
        x0 = np.concatenate([[0.0], s.q0])
        u0 = np.concatenate([[self.P.cyclic_velocity0], s.v0])
        return integrate_gauge_fixed(self.P.homogeneous, x0, u0, *self._window(), gauge=affine,
                                     tol=self.tol)


def _orbit_checks(C: Corners, corners, tol) -> dict:
    ref = C.orbit("newtonian")
    out = {}
    for corner in corners:
        if corner == "newtonian":
            continue
        try:
            d = orbit_distance(ref, C.orbit(corner))
        except EdgeError:
            raise
        except (VaridynError, ArithmeticError) as exc:
            raise EdgeError(f"orbit:{corner}", exc) from exc
        out[corner] = Check(corner, d, tol, {"reference": "newtonian"})
    return out


def _drift_checks(C: Corners, tol) -> dict:
    s = C.spec
    n = s.n
    met, sel = s.metric, s.selector
    out = {}
    calG = newtonian_energy(s.newtonian)
    out["calG"] = Check("calG", monitor_conserved(C.traj("newtonian"),
                                                  lambda q, v, t: calG(list(q), list(v))), tol)
    Gq = quadratic_energy(met)
    P0 = cyclic_momentum(met)
    tq = C.traj("quadratic")
    out["Gq"] = Check("Gq", monitor_conserved(tq, lambda q, v, t: Gq(list(q), list(v))), tol,
                      {"expected": sel.C})
    out["P0"] = Check("P0", monitor_conserved(
        tq, lambda q, v, t: P0(list(q[1:]), v[0], list(v[1:]), t)), tol, {"expected": s.p0})
    law = projected_conservation(met, s.E)
    out["projected"] = Check("projected", monitor_conserved(
        tq, lambda q, v, t: law(list(q[1:]), list(v[1:]))), tol,
        {"expected": 0.5 * sel.epsilon * sel.m ** 2 * s.c ** 2})
    G = stationary_energy(met, sel)
    out["G"] = Check("G", monitor_conserved(C.traj("sqrt"), lambda q, v, t: G(list(q), list(v))),
                     tol, {"expected": s.E})
    return out


def _epsilon_sign(C: Corners) -> Check:
    """The sign of eps g x'x' is the same (positive) along every corner's solution."""
    s = C.spec
    eps = s.selector.epsilon
    mins = {}
    for corner in ("quadratic", "homogeneous"):
        traj = C.traj(corner)
        vals = []
        for k in range(len(traj)):
            g = s.metric.g.matrix(traj.q[k, 1:])
            vals.append(eps * traj.v[k] @ g @ traj.v[k])
        mins[corner] = float(np.min(vals))
    traj = C.traj("sqrt")
    mins["sqrt"] = float(np.min(_cone(s, [traj.q[:, k] for k in range(s.n)],
                                      [traj.v[:, k] for k in range(s.n)])))
    ok = all(v > 0 for v in mins.values())
    return Check("epsilon-sign", 0.0 if ok else 1.0, 0.5, {"min_eps_gxx": mins})


def fermat_check(spec: ScenarioSpec, tol: float | None = None) -> Check:
    """Orbit of the ``m = 0`` Jacobi Lagrangian versus a null geodesic's spatial path."""
    tol = spec.tolerances["orbit"] if tol is None else tol
    itol = spec.tolerances["integrate"]
    f = spec.fermat or {"q": spec.q0, "direction": spec.v0, "t1": spec.t1 - spec.t0}
    met, c, E = spec.metric, spec.c, spec.E
    sel0 = GeodesicSelector(m=0.0, epsilon=spec.selector.epsilon, c=c)
    try:
        LF, phi = closed_form_jacobi("stationary_sqrt", (met, sel0), E)
        q, d, T = np.asarray(f["q"], float), np.asarray(f["direction"], float), float(f["t1"])
        fermat = integrate_gauge_fixed(LF, q, d, 0.0, T, gauge=phi, tol=itol)
        g = met.g.matrix(q)
        gamma_dd = float(d @ (-(g[1:, 1:] - np.outer(g[0, 1:], g[0, 1:]) / g[0, 0])) @ d)
        alpha = E / (c * math.sqrt(g[0, 0] * gamma_dd))
        w = (E / c - alpha * (g[0, 1:] @ d)) / g[0, 0]
        x0 = np.concatenate([[0.0], q])
        u0 = np.concatenate([[w], alpha * d])
        Lq = geodesic_lagrangian(met, sel0, "quadratic")
        null = integrate_el(Lq, x0, u0, 0.0, 2.0 * c * T / w, tol=itol)
        null = truncate(null, 0, c * T)
        d_orbit = orbit_distance(orbit_resample(fermat), orbit_resample(null, list(range(1, spec.n + 1))))
        null_drift = monitor_conserved(null, lambda x, u, t: float(u @ met.g.matrix(x[1:]) @ u))
    except (VaridynError, ArithmeticError) as exc:
        raise EdgeError("fermat", exc) from exc
    return Check("fermat", d_orbit, tol, {"null_norm_drift": null_drift, "window": T})


def conic_residual(points: np.ndarray) -> tuple[float, float]:
    """Geometric residual of the best-fit plane conic and its discriminant.

    Fits ``A x^2 + B x y + C y^2 + D x + E y + F = 0`` by the smallest right
    singular vector and returns ``(max |f| / |grad f|, B^2 - 4 A C)``; a
    negative discriminant means an ellipse.
    """
    x, y = points[:, 0], points[:, 1]
    scale = float(np.max(np.abs(points))) or 1.0
    xs, ys = x / scale, y / scale
    M = np.column_stack([xs * xs, xs * ys, ys * ys, xs, ys, np.ones_like(xs)])
    A, B, Cc, Dd, Ee, F = np.linalg.svd(M)[2][-1]
    f = A * xs * xs + B * xs * ys + Cc * ys * ys + Dd * xs + Ee * ys + F
    gx = 2 * A * xs + B * ys + Dd
    gy = B * xs + 2 * Cc * ys + Ee
    res = float(np.max(np.abs(f) / np.hypot(gx, gy))) * scale
    return res, float(B * B - 4 * A * Cc)


def measure_period(traj: Trajectory, center=(0.0, 0.0)) -> float:
    """Time for the polar angle about ``center`` to sweep a full turn."""
    center = np.asarray(center, float)

    def angle(t):
        q, _ = traj.interpolate(np.atleast_1d(t))
        d = q[:, :2] - center
        return np.arctan2(d[:, 1], d[:, 0])

    ts = np.linspace(traj.t[0], traj.t[-1], 40 * len(traj))
    swept = np.unwrap(angle(ts))
    swept = np.abs(swept - swept[0])
    k = np.flatnonzero(swept >= 2 * np.pi)
    if k.size == 0:
        raise VaridynError("orbit does not complete a revolution in the window")
    a, b = ts[k[0] - 1], ts[k[0]]
    base, angle_a = swept[k[0] - 1], angle(a)[0]

    def excess(t):
        turn = np.angle(np.exp(1j * (angle(t)[0] - angle_a)))
        return base + abs(float(turn)) - 2 * np.pi

    return brentq(excess, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps) - traj.t[0]


def closed_orbit_checks(spec: ScenarioSpec, tol: float | None = None) -> dict:
    """Conic residual and period of the directly integrated Newtonian orbit."""
    tol = spec.tolerances["orbit"] if tol is None else tol
    T = spec.period
    out = {}
    try:
        N = newtonian_lagrangian(spec.newtonian)
        traj = integrate_el(N, spec.q0, spec.v0, spec.t0, spec.t0 + 1.25 * T,
                            tol=spec.tolerances["integrate"])
        q, _ = traj.interpolate(np.linspace(spec.t0, spec.t0 + T, 2000))
        res, disc = conic_residual(q)
        measured = measure_period(traj)
    except (VaridynError, ArithmeticError) as exc:
        raise EdgeError("closed-orbit", exc) from exc
    out["conic"] = Check("conic", res, tol, {"discriminant": disc})
    out["period"] = Check("period", abs(measured - T) / T, tol,
                          {"measured": measured, "expected": T})
    return out


# -- entry points ------------------------------------------------------------

def run_loop(spec: ScenarioSpec, which: str, points: int = DEFAULT_POINTS, seed: int = 0,
             pieces: Pieces | None = None, corners: Corners | None = None,
             orbits: bool = True) -> DiagramReport:
    """Execute one loop of the diagram on ``spec``."""
    if which not in LOOPS:
        raise ValueError(f"loop must be one of {LOOPS}")
    require_coupling(spec.p0, spec.E, spec.c)
    P = pieces or Pieces(spec, points, seed)
    rep = DiagramReport(spec.name, seed, P.points)
    tol = spec.tolerances["lagrangian"]
    rep.edges[which] = _LOOP_FNS[which](P, tol)
    if orbits:
        C = corners or Corners(P)
        rep.orbits.update(_orbit_checks(C, LOOP_CORNERS[which], spec.tolerances["orbit"]))
    return rep


def verify_commuting_diagram(spec: ScenarioSpec, points: int = DEFAULT_POINTS,
                             seed: int = 0) -> DiagramReport:
    """All four loops, every corner orbit, conservation drifts and structural checks."""
    require_coupling(spec.p0, spec.E, spec.c)
    P = Pieces(spec, points, seed)
    C = Corners(P)
    rep = DiagramReport(spec.name, seed, points)
    for loop in LOOPS:
        rep.merge(run_loop(spec, loop, points, seed, pieces=P, corners=C))
    rep.drifts.update(_drift_checks(C, spec.tolerances["drift"]))
    rep.checks["epsilon-sign"] = _epsilon_sign(C)
    if spec.fermat is not None:
        rep.checks["fermat"] = fermat_check(spec)
    if spec.closed and spec.period is not None and spec.n == 2:
        rep.checks.update(closed_orbit_checks(spec))
    return rep


def energy_audit(spec: ScenarioSpec, periods: float | None = None) -> DiagramReport:
    """Drifts of every corner's first integral over several characteristic periods.

    The characteristic period is the scenario's declared period, or the length
    of its integration window when none is declared.
    """
    require_coupling(spec.p0, spec.E, spec.c)
    periods = spec.tolerances["periods"] if periods is None else periods
    span = spec.period if spec.period is not None else spec.t1 - spec.t0
    long = dataclasses.replace(spec, t1=spec.t0 + periods * span)
    P = Pieces(long, SPOT_POINTS, 0)
    rep = DiagramReport(spec.name, 0, 0)
    try:
        rep.drifts.update(_drift_checks(Corners(P), spec.tolerances["drift"]))
    except EdgeError as exc:
        if not isinstance(exc.cause, StepUnderflowError):
            raise
        # unbound motion can leave the chart (e.g. a rotating frame's light cylinder)
        raise EdgeError(exc.edge, StepUnderflowError(
            f"{exc.cause}; the motion does not survive the audit window "
            f"[{long.t0}, {long.t1}], declare a period or a shorter window")) from exc
    for c in rep.drifts.values():
        c.detail["window"] = [long.t0, long.t1]
    return rep
