import math

import numpy as np
import pytest

from conftest import UNIT, flat_metric, free_system, kepler_system, metric
from varidyn.errors import FieldDomainError, ForbiddenRegionError, PreconditionError
from varidyn.integrate import integrate_el, monitor_conserved
from varidyn.lagrangian import energy_function
from varidyn.systems import (GeodesicSelector, NewtonianSystem, closed_form_jacobi,
                             geodesic_lagrangian, metric_to_newtonian, newtonian_lagrangian,
                             newtonian_to_metric, projected_conservation, routh_closed_form,
                             routh_constant, space_metric, stationary_energy)


def rotating(w=0.2):
    return metric(2, {(0, 0): f"1 - {w}^2*(q1^2 + q2^2)", (0, 1): f"{w}*q2",
                      (0, 2): f"-{w}*q1", (1, 1): "-1", (2, 2): "-1"})


class TestNewtonian:
    def test_free(self):
        assert newtonian_lagrangian(free_system()).value([0, 0], [3, 4]) == 12.5

    def test_kepler_at_rest(self):
        assert newtonian_lagrangian(kepler_system()).value([1.0, 0.0], [0, 0]) == 1.0

    def test_magnetic_coupling(self):
        sys = NewtonianSystem.build(2, A=["q2", "0"], coupling=2.0, c=1.0)
        assert newtonian_lagrangian(sys).value([1.0, 3.0], [1.0, 0.0]) == 6.5


class TestGeodesic:
    def test_quadratic(self):
        assert geodesic_lagrangian(flat_metric(), UNIT, "quadratic").value([0, 0], [2, 1]) == -1.5

    def test_sqrt(self):
        v = geodesic_lagrangian(flat_metric(), UNIT, "sqrt").value([0.0], [0.6])
        assert v == pytest.approx(-0.8, abs=1e-15)

    def test_homogeneous(self):
        v = geodesic_lagrangian(flat_metric(), UNIT, "homogeneous_sqrt").value([0, 0], [2, 1])
        assert v == pytest.approx(-math.sqrt(3), abs=1e-15)

    def test_cone_violation(self):
        with pytest.raises(FieldDomainError):
            geodesic_lagrangian(flat_metric(), UNIT, "sqrt").value([0.0], [1.5])

    def test_sqrt_needs_mass(self):
        with pytest.raises(PreconditionError):
            geodesic_lagrangian(flat_metric(), GeodesicSelector(m=0.0), "sqrt")

    def test_energy_matches_closed_form(self, rng):
        met = rotating()
        L = geodesic_lagrangian(met, UNIT, "sqrt")
        G, closed = energy_function(L), stationary_energy(met, UNIT)
        for _ in range(50):
            q, v = list(rng.uniform(-0.6, 0.6, 2)), list(rng.uniform(-0.3, 0.3, 2))
            assert abs(G.value(q, v) - closed.value(q, v)) < 1e-11


class TestSpaceMetric:
    def test_shifted(self):
        met = metric(1, {(0, 0): "1", (0, 1): "0.5", (1, 1): "-1"})
        assert space_metric(met, [0.0])[0, 0] == pytest.approx(1.25, abs=1e-15)

    def test_diagonal(self):
        met = metric(2, {(0, 0): "2", (1, 1): "-3", (2, 2): "-1 - q1^2"})
        assert np.array_equal(space_metric(met, [2.0, 0.0]), np.diag([3.0, 5.0]))

    def test_flat(self):
        assert np.array_equal(space_metric(flat_metric(3), [0.1, 0.2, 0.3]), np.eye(3))


class TestClosedFormJacobi:
    def test_newtonian_free(self):
        LE, phi = closed_form_jacobi("newtonian", free_system(), 2.0)
        assert LE.value([0, 0], [3.0, 4.0]) == pytest.approx(10.0, abs=1e-14)
        assert phi([0, 0], [3.0, 4.0]) == pytest.approx(2.5, abs=1e-15)

    def test_stationary_flat(self):
        LE, phi = closed_form_jacobi("stationary_sqrt", (flat_metric(), UNIT), 1.25)
        assert LE.value([0.0], [1.0]) == pytest.approx(0.75, abs=1e-15)
        assert phi([0.0], [1.0]) == pytest.approx(5 / 3, abs=1e-15)

    def test_fermat(self):
        sel = GeodesicSelector(m=0.0)
        LE, _ = closed_form_jacobi("stationary_sqrt", (flat_metric(2), sel), 1.0)
        assert LE.value([0, 0], [3.0, 4.0]) == pytest.approx(5.0, abs=1e-14)

    def test_forbidden_region(self):
        with pytest.raises(ForbiddenRegionError):
            LE, _ = closed_form_jacobi("newtonian", kepler_system(), -2.0)
            LE.value([1.0, 0.0], [1.0, 0.0])

    def test_null_quadratic_rejected(self):
        with pytest.raises(PreconditionError):
            closed_form_jacobi("quadratic_geodesic", (flat_metric(), GeodesicSelector(m=0.0)))

    def test_quadratic_geodesic(self):
        LC, _ = closed_form_jacobi("quadratic_geodesic", (flat_metric(), UNIT), -0.5)
        assert LC.value([0, 0], [2.0, 1.0]) == pytest.approx(-math.sqrt(3), abs=1e-15)


class TestIdentification:
    def test_flat_metric_gives_free_system(self):
        E = 1.3
        calE = -0.5 + E ** 2 / 2
        sys = metric_to_newtonian(flat_metric(2), UNIT, E, calE)
        for q in ([0.0, 0.0], [0.3, -0.7]):
            assert sys.V(q) == pytest.approx(0.0, abs=1e-15)
            assert sys.A(q) == [0.0, 0.0]
            assert np.array_equal(sys.e.matrix(q), np.eye(2))

    def test_static_metric_potential(self):
        met = metric(1, {(0, 0): "1 - 1/q1", (1, 1): "-1"})
        sys = metric_to_newtonian(met, UNIT, 1.0, 0.0)
        for r in (1.5, 2.0, 5.0):
            assert sys.V([r]) == pytest.approx(0.5 - 1 / (2 * (1 - 1 / r)), abs=1e-15)

    def test_static_metric_has_no_vector_potential(self):
        met = metric(2, {(0, 0): "1 + q1^2", (1, 1): "-1", (2, 2): "-1"})
        assert metric_to_newtonian(met, UNIT, 1.0, 0.5).A([0.4, 0.1]) == [0.0, 0.0]

    def test_free_system_gives_constant_g00(self):
        met = newtonian_to_metric(free_system(), UNIT, 1.0, 0.5)
        assert met.g00([0.1, 0.2]) == met.g00([-3.0, 7.0]) == 0.5

    def test_kepler_g00(self):
        met = newtonian_to_metric(kepler_system(), UNIT, 1.0, -0.5)
        for r in (0.5, 1.0, 3.0):
            assert met.g00([r, 0.0]) == pytest.approx(r / 2, abs=1e-15)

    def test_round_trip(self, rng):
        sys = NewtonianSystem.build(2, V="-1/sqrt(q1^2 + q2^2) + 0.1*q1", A=["0.3*q2", "-0.3*q1"],
                                    e=[["1 + 0.1*q2^2", "0.2"], ["0.2", "1"]], coupling=1.7)
        E, calE = 1.2, 0.4
        back = metric_to_newtonian(newtonian_to_metric(sys, UNIT, E, calE), UNIT, E, calE,
                                   coupling=1.7)
        for _ in range(50):
            q = list(rng.uniform(0.5, 1.5, 2))
            assert abs(back.V(q) - sys.V(q)) < 1e-12
            assert np.max(np.abs(np.array(back.A(q)) - np.array(sys.A(q)))) < 1e-12
            assert np.max(np.abs(back.e.matrix(q) - sys.e.matrix(q))) < 1e-12

    def test_kinetic_and_vector_terms_agree_with_routh(self, rng):
        met, E, calE = rotating(), 1.2, 1.2 ** 2 / 2 - 0.5
        sys = metric_to_newtonian(met, UNIT, E, calE)
        R = routh_closed_form(met, -E)
        N = newtonian_lagrangian(sys)
        const = routh_constant(UNIT, calE)
        for _ in range(100):
            q, v = list(rng.uniform(-0.6, 0.6, 2)), list(rng.uniform(-1, 1, 2))
            assert abs(R.value(q, v) - const - N.value(q, v)) < 1e-12


class TestRouthClosedForm:
    def test_flat(self):
        assert routh_closed_form(flat_metric(), 1.0).value([0.0], [2.0]) == 2.5

    def test_no_momentum(self):
        met = rotating()
        R = routh_closed_form(met, 0.0)
        q, v = [0.3, 0.4], [0.5, -0.2]
        g = space_metric(met, q)
        assert R.value(q, v) == pytest.approx(0.5 * np.array(v) @ g @ np.array(v), abs=1e-15)

    def test_static(self):
        met = metric(1, {(0, 0): "0.5", (1, 1): "-1"})
        assert routh_closed_form(met, 1.0).value([0.0], [0.0]) == 1.0

    def test_mass_scaled_variant(self):
        met = metric(1, {(0, 0): "0.5", (1, 1): "-1"})
        R = routh_closed_form(met, 1.0, m=2.0, mass_scaled=True)
        assert R.value([0.0], [0.0]) == pytest.approx(0.5)


def test_projected_law_along_geodesics():
    met, E = rotating(), 1.2
    L = geodesic_lagrangian(met, UNIT, "quadratic")
    q, v = [0.5, 0.0], [0.0, 0.3]
    g = met.g.matrix(q)
    w = (E - g[0, 1:] @ v) / g[0, 0]
    traj = integrate_el(L, [0.0] + q, [w] + v, 0.0, 8.0)
    law = projected_conservation(met, E)
    vals = [law(list(traj.q[k, 1:]), list(traj.v[k, 1:])) for k in range(len(traj))]
    assert monitor_conserved(traj, lambda x, u, t: law(list(x[1:]), list(u[1:]))) < 1e-8
    # the law equals half the lifted norm g u u, i.e. minus the quadratic Lagrangian
    assert abs(vals[0] + L.value([0.0] + q, [w] + v)) < 1e-12
