"""Concrete system families, their closed-form reductions and identification maps.

Three families are covered:

* Newtonian systems ``1/2 e_ij v^i v^j + (coupling/c) A_k v^k - V`` on ``n`` dof;
* geodesics of a stationary metric ``g_ab(q^1..q^n)`` in quadratic (affine),
  square-root (coordinate time ``t = q^0/c``) and homogeneous square-root form;
* their Jacobi and Routh reductions in closed form.

Coordinates of lifted (``n+1`` dof) Lagrangians are ordered ``(xi^0, xi^1..xi^n)``
with ``xi^0`` cyclic.  Metric fields are functions of the spatial coordinates
only, so stationarity holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import dual as D
from .errors import (DimensionError, FieldDomainError, ForbiddenRegionError, PreconditionError,
                     SignatureError)
from .fields import CovectorField, ScalarField, SymTensorField, as_field
from .lagrangian import Domain, EnergyFn, LagrangianFn

FAMILIES = ("newtonian", "stationary_sqrt", "quadratic_geodesic")
FORMS = ("quadratic", "sqrt", "homogeneous_sqrt")


# -- system types ------------------------------------------------------------

@dataclass(frozen=True)
class NewtonianSystem:
    """Kinetic tensor ``e``, vector potential ``A``, scalar potential ``V``."""

    n: int
    e: SymTensorField
    A: CovectorField
    V: ScalarField
    coupling: float = 1.0
    c: float = 1.0
    domain: Domain | None = None
    name: str = "newtonian"

    def __post_init__(self):
        if self.e.size != self.n or self.e.dim != self.n:
            raise DimensionError(f"kinetic tensor must be {self.n}x{self.n} over {self.n} coords")
        if self.A.dim != self.n or self.V.dim != self.n:
            raise DimensionError("potentials must be fields over the configuration coordinates")
        if not self.c > 0:
            raise ValueError("c must be positive")

    @classmethod
    def build(cls, n, V=0.0, e=None, A=None, **kw) -> "NewtonianSystem":
        """Convenience constructor taking expression strings or numbers."""
        e = e or SymTensorField.diagonal(n, [1.0] * n)
        if not isinstance(e, SymTensorField):
            e = SymTensorField(n, e)
        A = A if isinstance(A, CovectorField) else (
            CovectorField.zero(n) if A is None else CovectorField(n, A))
        return cls(n, e, A, as_field(V, n), **kw)


@dataclass(frozen=True)
class StationaryMetric:
    """Lorentzian metric on ``n+1`` dimensions with components depending on ``q^1..q^n``."""

    n: int
    g: SymTensorField
    c: float = 1.0
    domain: Domain | None = None
    name: str = "metric"

    def __post_init__(self):
        if self.g.size != self.n + 1 or self.g.dim != self.n:
            raise DimensionError(
                f"metric must be {self.n + 1}x{self.n + 1} over {self.n} spatial coordinates")
        if not self.c > 0:
            raise ValueError("c must be positive")

    @cached_property
    def g00(self) -> ScalarField:
        return self.g.component(0, 0)

    @cached_property
    def gamma(self) -> SymTensorField:
        """Space metric ``-(g_ij - g_0i g_0j / g_00)`` as a field."""
        g00 = self.g00
        upper = {}
        for i in range(self.n):
            for j in range(i, self.n):
                gi, gj = self.g.component(0, i + 1), self.g.component(0, j + 1)
                gij = self.g.component(i + 1, j + 1)
                upper[i, j] = -gij if _is_zero(gi) or _is_zero(gj) else -(gij - gi * gj / g00)
        return SymTensorField.from_upper(self.n, upper, self.n)

    def shift(self, q) -> list:
        """``g_0k / g_00`` at ``q``."""
        g00 = self.g00(q)
        return [D.div(self.g.component(0, k + 1)(q), g00) for k in range(self.n)]

    def check_signature(self, q):
        self.g.check_lorentzian(q)
        if float(self.g00([float(x) for x in q])) <= 0:
            raise SignatureError(f"g00 <= 0 at {list(q)}")


@dataclass(frozen=True)
class GeodesicSelector:
    """Mass parameter, causal character and light speed of the geodesic family."""

    m: float = 1.0
    epsilon: int = 1
    c: float = 1.0

    def __post_init__(self):
        if self.epsilon not in (1, -1):
            raise ValueError("epsilon must be +1 (timelike) or -1 (spacelike)")
        if self.m < 0 or not self.c > 0:
            raise ValueError("need m >= 0 and c > 0")

    @property
    def C(self) -> float:
        """Value of the quadratic energy ``-1/2 eps m^2 c^2``."""
        return -0.5 * self.epsilon * self.m ** 2 * self.c ** 2


def routh_constant(sel: GeodesicSelector, calE: float) -> float:
    """``calE + 1/2 eps m^2 c^2``: offset between the Routh function and the Newtonian form."""
    return calE + 0.5 * sel.epsilon * sel.m ** 2 * sel.c ** 2


def _same_c(met: StationaryMetric, sel: GeodesicSelector):
    if met.c != sel.c:
        raise PreconditionError(f"metric c = {met.c} differs from selector c = {sel.c}")


# -- helpers -----------------------------------------------------------------

def _quad(M, a, b=None):
    b = a if b is None else b
    s = 0.0
    for i in range(len(a)):
        for j in range(len(b)):
            s = s + M[i][j] * a[i] * b[j]
    return s


def _positive(x, message, forbidden=False):
    """Raise unless every entry of ``x`` is positive (NaN in lenient mode)."""
    bad = ~(np.asarray(D.primal(x)) > 0)
    if np.any(bad):
        if not D.is_lenient():
            raise (ForbiddenRegionError if forbidden else FieldDomainError)(message)
        if isinstance(x, D.Dual):
            return x * np.where(bad, np.nan, 1.0)
        return np.where(bad, np.nan, x) if isinstance(x, np.ndarray) else float("nan")
    return x


def _lift_domain(domain: Domain | None, q0=(-1.0, 1.0), u0=(0.5, 2.0)):
    return None if domain is None else domain.insert(0, q0, u0)


# -- Newtonian family --------------------------------------------------------

def newtonian_lagrangian(sys: NewtonianSystem, name: str | None = None) -> LagrangianFn:
    """``1/2 e v v + (coupling/c) A v - V``, time independent, with closed-form energy."""
    k = sys.coupling / sys.c

    def func(q, v, t):
        a = sys.A(q)
        return 0.5 * _quad(sys.e(q), v) + k * sum(a[i] * v[i] for i in range(sys.n)) - sys.V(q)

    return LagrangianFn(func, sys.n, time_independent=True, name=name or f"N[{sys.name}]",
                        domain=sys.domain, energy=newtonian_energy(sys),
                        meta={"family": "newtonian"})


def newtonian_energy(sys: NewtonianSystem) -> EnergyFn:
    """``1/2 e v v + V``; the magnetic term carries no energy."""
    return EnergyFn(lambda q, v: 0.5 * _quad(sys.e(q), v) + sys.V(q), sys.n,
                    name=f"energy[{sys.name}]")


# -- geodesic family ---------------------------------------------------------

def quadratic_energy(met: StationaryMetric) -> EnergyFn:
    """``-1/2 g_ab u^a u^b`` on ``n+1`` dof (equal to the quadratic Lagrangian itself)."""
    return EnergyFn(lambda x, u: -0.5 * _quad(met.g(x[1:]), u), met.n + 1,
                    name=f"Gq[{met.name}]")


def cyclic_momentum(met: StationaryMetric) -> Callable:
    """Momentum conjugate to ``xi^0``: ``P(q_rest, w, v_rest, t) = -g00 w - g0k v^k``."""
    def P(q_rest, w, v_rest, t=0.0):
        g = met.g(list(q_rest))
        return -g[0][0] * w - sum(g[0][k + 1] * v_rest[k] for k in range(met.n))
    return P


def stationary_energy(met: StationaryMetric, sel: GeodesicSelector) -> EnergyFn:
    """Energy of the coordinate-time square-root Lagrangian."""
    c, m, eps = sel.c, sel.m, sel.epsilon

    def G(q, v):
        g = met.g(q)
        lin = g[0][0] + 2 * sum(g[0][k + 1] * v[k] for k in range(met.n)) / c
        lin = lin + _quad([row[1:] for row in g[1:]], v) / c ** 2
        root = D.sqrt(_positive(eps * lin, "velocity outside the causal cone of the metric"))
        return m * c ** 2 * (g[0][0] + sum(g[0][k + 1] * v[k] for k in range(met.n)) / c) / root

    return EnergyFn(G, met.n, name=f"Gs[{met.name}]")


def geodesic_lagrangian(met: StationaryMetric, sel: GeodesicSelector, form: str = "quadratic",
                        name: str | None = None) -> LagrangianFn:
    """Geodesic Lagrangian of ``met`` in one of three forms.

    ``quadratic``
        ``-1/2 g_ab u^a u^b`` on ``n+1`` dof, affine parameter.
    ``sqrt``
        ``-eps m c^2 sqrt(eps (g00 + 2 g0k v^k/c + g_kl v^k v^l/c^2))`` on ``n`` dof
        in coordinate time ``t = q^0/c``.
    ``homogeneous_sqrt``
        ``-eps m c sqrt(eps g_ab x'^a x'^b)`` on ``n+1`` dof, homogeneous of degree one.
    """
    _same_c(met, sel)
    c, m, eps, n = sel.c, sel.m, sel.epsilon, met.n
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if form != "quadratic" and not m > 0:
        raise PreconditionError("square-root geodesic Lagrangians need m > 0")
    if form == "quadratic":
        return LagrangianFn(lambda x, u, t: -0.5 * _quad(met.g(x[1:]), u), n + 1,
                            time_independent=True, name=name or f"Lq[{met.name}]",
                            domain=_lift_domain(met.domain), energy=quadratic_energy(met),
                            momenta={0: cyclic_momentum(met)}, meta={"family": "quadratic"})
    if form == "sqrt":
        def func(q, v, t):
            g = met.g(q)
            s = g[0][0] + 2 * sum(g[0][k + 1] * v[k] for k in range(n)) / c
            s = s + _quad([row[1:] for row in g[1:]], v) / c ** 2
            s = _positive(eps * s, "velocity outside the causal cone of the metric")
            return -m * c ** 2 * eps * D.sqrt(s)
        return LagrangianFn(func, n, time_independent=True, name=name or f"Ls[{met.name}]",
                            domain=met.domain, energy=stationary_energy(met, sel),
                            meta={"family": "sqrt"})

    def func_h(x, u, t):
        s = _positive(eps * _quad(met.g(x[1:]), u), "velocity on or outside the metric cone")
        return -eps * m * c * D.sqrt(s)
    return LagrangianFn(func_h, n + 1, time_independent=True, homogeneous=True,
                        name=name or f"Lh[{met.name}]", domain=_lift_domain(met.domain),
                        meta={"family": "homogeneous_sqrt"})


def reparametrize_time(L: LagrangianFn, c: float = 1.0, name: str | None = None) -> LagrangianFn:
    """Homogeneous form of a time-independent ``L`` with ``t = x^0/c`` made dynamical.

    ``L_h(x, x') = L(x^k, c x'^k / x'^0) x'^0 / c`` on ``n+1`` dof.
    """
    if not L.time_independent:
        raise PreconditionError("reparametrization needs a time-independent Lagrangian")
    n = L.dof

    def func(x, u, t):
        rate = _positive(u[0], "x'^0 must be positive (time runs forward)")
        return L(list(x[1:]), [c * uk / rate for uk in u[1:]], 0.0) * rate / c

    dom = None if L.domain is None else L.domain.insert(0, (-1.0, 1.0), (0.5 * c, 2.0 * c))
    return LagrangianFn(func, n + 1, time_independent=True, homogeneous=True,
                        name=name or f"H[{L.name}]", domain=dom, check=False,
                        meta={"edge": "homogenize"})


def space_metric(met: StationaryMetric, q) -> np.ndarray:
    """Matrix ``gamma_ij = -(g_ij - g_0i g_0j / g_00)`` at a spatial point."""
    g = met.g.matrix(q)
    if g[0, 0] == 0:
        raise FieldDomainError(f"g00 vanishes at {list(q)}; space metric undefined")
    return -(g[1:, 1:] - np.outer(g[0, 1:], g[0, 1:]) / g[0, 0])


# -- closed-form Jacobi reductions ------------------------------------------

def _newtonian_jacobi(sys: NewtonianSystem, E: float):
    k = sys.coupling / sys.c

    def gap(q):
        return _positive(E - sys.V(q), f"forbidden region: energy {E} below the potential",
                         forbidden=True)

    def L_E(x, xp, t):
        a = sys.A(x)
        return (D.sqrt(2 * gap(x) * _quad(sys.e(x), xp))
                + k * sum(a[i] * xp[i] for i in range(sys.n)))

    def phi(x, xp):
        return D.sqrt(_quad(sys.e(x), xp) / (2 * gap(x)))

    reduced = LagrangianFn(L_E, sys.n, time_independent=True, homogeneous=True,
                           name=f"NJ[{sys.name}, E={E:g}]", domain=sys.domain, check=False,
                           meta={"family": "newtonian", "closed_form": True})
    return reduced, phi


def _stationary_jacobi(met: StationaryMetric, sel: GeodesicSelector, E: float):
    _same_c(met, sel)
    c, m, eps, n = sel.c, sel.m, sel.epsilon, met.n

    def pieces(x):
        g00 = _positive(met.g00(x), "g00 <= 0: outside the stationary region")
        radial = _positive(E ** 2 / c ** 2 - m ** 2 * c ** 2 * eps * g00,
                           "E^2/c^2 - m^2 c^2 eps g00 must be positive", forbidden=True)
        shift = [D.div(met.g.component(0, k + 1)(x), g00) for k in range(n)]
        return g00, radial, shift, met.gamma(x)

    def L_E(x, xp, t):
        g00, radial, shift, gam = pieces(x)
        return (D.sqrt(radial / g00 * _quad(gam, xp))
                - E / c * sum(shift[k] * xp[k] for k in range(n)))

    def phi(x, xp):
        g00, radial, shift, gam = pieces(x)
        return (-sum(shift[k] * xp[k] for k in range(n)) / c
                + E / (c * D.sqrt(g00)) * D.sqrt(_quad(gam, xp) / radial))

    reduced = LagrangianFn(L_E, n, time_independent=True, homogeneous=True,
                           name=f"SJ[{met.name}, E={E:g}, m={m:g}]", domain=met.domain,
                           check=False, meta={"family": "stationary_sqrt", "closed_form": True})
    return reduced, phi


def _quadratic_jacobi(met: StationaryMetric, sel: GeodesicSelector, C: float | None):
    _same_c(met, sel)
    if not sel.m > 0:
        raise PreconditionError(
            "Jacobi reduction of the quadratic geodesic Lagrangian is impossible for null "
            "geodesics (m = 0)")
    if C is not None and abs(C - sel.C) > 1e-12 * (1 + abs(sel.C)):
        raise PreconditionError(f"C = {C} is inconsistent with -1/2 eps m^2 c^2 = {sel.C}")
    c, m, eps = sel.c, sel.m, sel.epsilon

    def norm(x, xp):
        return D.sqrt(_positive(eps * _quad(met.g(x[1:]), xp),
                                "velocity on or outside the metric cone"))

    reduced = LagrangianFn(lambda x, xp, t: -eps * m * c * norm(x, xp), met.n + 1,
                           time_independent=True, homogeneous=True,
                           name=f"QJ[{met.name}, C={sel.C:g}]", domain=_lift_domain(met.domain),
                           check=False, meta={"family": "quadratic_geodesic", "closed_form": True})
    return reduced, lambda x, xp: norm(x, xp) / (m * c)


def closed_form_jacobi(family: str, params, E: float | None = None):
    """Closed-form Jacobi Lagrangian and time-rate function ``phi_E``.

    Parameters
    ----------
    family : {"newtonian", "stationary_sqrt", "quadratic_geodesic"}
    params : NewtonianSystem or (StationaryMetric, GeodesicSelector)
    E : float
        Energy constant; for the quadratic family it is ``C`` and may be
        omitted (it is fixed by the selector).

    Returns
    -------
    (LagrangianFn, callable)
    """
    if family == "newtonian":
        if not isinstance(params, NewtonianSystem):
            raise TypeError("newtonian family needs a NewtonianSystem")
        return _newtonian_jacobi(params, float(E))
    met, sel = params
    if family == "stationary_sqrt":
        return _stationary_jacobi(met, sel, float(E))
    if family == "quadratic_geodesic":
        return _quadratic_jacobi(met, sel, None if E is None else float(E))
    raise ValueError(f"family must be one of {FAMILIES}")


# -- identification maps -----------------------------------------------------

def _sample_spatial(domain: Domain | None, n: int, points: int = 64):
    if domain is None:
        return []
    rng = np.random.default_rng(0)
    Q, _, _ = domain.sample(rng, points)
    return list(Q)


def metric_to_newtonian(met: StationaryMetric, sel: GeodesicSelector, E: float, calE: float,
                        coupling: float = 1.0, name: str | None = None) -> NewtonianSystem:
    """Newtonian system whose Jacobi orbits at ``calE`` are the metric's orbits at ``E``.

    ``e = gamma``, ``A_i = -(g_0i/g_00) E / coupling`` and
    ``V = calE + 1/2 m^2 c^2 eps - E^2 / (2 g00 c^2)``.
    """
    _same_c(met, sel)
    if coupling == 0:
        raise PreconditionError("coupling constant must be nonzero")
    for q in _sample_spatial(met.domain, met.n):
        if met.g00(list(q)) <= 0:
            raise PreconditionError(f"g00 <= 0 at sampled domain point {list(q)}")
    c, n = sel.c, met.n
    g00 = met.g00
    A = CovectorField(n, [_simplify_zero(met.g.component(0, k + 1), lambda f: -(f / g00) * (
        E / coupling)) for k in range(n)])
    V = (-(E ** 2 / (2 * c ** 2)) / g00) + routh_constant(sel, calE)
    return NewtonianSystem(n, met.gamma, A, V, coupling=coupling, c=c, domain=met.domain,
                           name=name or f"newtonian[{met.name}]")


def newtonian_to_metric(sys: NewtonianSystem, sel: GeodesicSelector, E: float, calE: float,
                        name: str | None = None) -> StationaryMetric:
    """Stationary metric inverting :func:`metric_to_newtonian`.

    ``g00 = E^2 / (2 c^2 (calE + 1/2 m^2 c^2 eps - V))``, ``g_0i = -coupling A_i g00 / E``,
    ``g_ij = g_0i g_0j / g00 - e_ij``.
    """
    if E == 0:
        raise PreconditionError("E must be nonzero")
    if sys.c != sel.c:
        raise PreconditionError(f"system c = {sys.c} differs from selector c = {sel.c}")
    const = routh_constant(sel, calE)
    for q in _sample_spatial(sys.domain, sys.n):
        if const - sys.V(list(q)) <= 0:
            raise PreconditionError(
                f"calE + m^2 c^2 eps/2 - V must be positive (g00 > 0); fails at {list(q)}")
    c, n = sel.c, sys.n
    g00 = (E ** 2 / (2 * c ** 2)) / (const - sys.V)
    g0 = [_simplify_zero(sys.A[k], lambda f: -(sys.coupling / E) * f * g00) for k in range(n)]
    upper = {(0, 0): g00}
    for i in range(n):
        upper[(0, i + 1)] = g0[i]
        for j in range(i, n):
            eij = sys.e.component(i, j)
            if _is_zero(g0[i]) or _is_zero(g0[j]):
                upper[(i + 1, j + 1)] = -eij
            else:
                upper[(i + 1, j + 1)] = g0[i] * g0[j] / g00 - eij
    g = SymTensorField.from_upper(n, upper, n + 1)
    return StationaryMetric(n, g, c=c, domain=sys.domain, name=name or f"metric[{sys.name}]")


def _is_zero(f: ScalarField) -> bool:
    return f.is_constant and float(f([0.0] * f.dim)) == 0.0


def _simplify_zero(f: ScalarField, build):
    """Keep vanishing components literally zero so no spurious divisions appear."""
    return ScalarField.constant(0.0, f.dim) if _is_zero(f) else build(f)


# -- Routh reduction of the quadratic lift ----------------------------------

def routh_closed_form(met: StationaryMetric, p0: float, m: float | None = None,
                      mass_scaled: bool = False, name: str | None = None) -> LagrangianFn:
    """Routh function of the quadratic geodesic Lagrangian at momentum ``p0``.

    ``1/2 gamma v v + p0 (g_0k/g_00) v^k + p0^2 / (2 g_00)``.  With
    ``mass_scaled=True`` the last term is divided by ``m`` (the printed
    variant, which does not match the numeric reduction unless ``m = 1``).
    """
    if mass_scaled and not (m and m > 0):
        raise PreconditionError("mass_scaled form needs m > 0")
    scale = m if mass_scaled else 1.0
    n = met.n

    def func(q, v, t):
        g00 = _positive(met.g00(q), "g00 <= 0: outside the stationary region")
        shift = [D.div(met.g.component(0, k + 1)(q), g00) for k in range(n)]
        return (0.5 * _quad(met.gamma(q), v) + p0 * sum(shift[k] * v[k] for k in range(n))
                + p0 ** 2 / (2 * scale * g00))

    return LagrangianFn(func, n, time_independent=True, name=name or f"R[{met.name}, p0={p0:g}]",
                        domain=met.domain, meta={"family": "routh_closed_form", "p0": p0})


def projected_conservation(met: StationaryMetric, E: float, c: float | None = None):
    """``-1/2 gamma v v + E^2 / (2 g00 c^2)``; equals ``1/2 eps m^2 c^2`` along geodesics."""
    c = met.c if c is None else c

    def law(q, v, t=0.0):
        return -0.5 * _quad(met.gamma(q), v) + E ** 2 / (2 * met.g00(q) * c ** 2)

    return law
