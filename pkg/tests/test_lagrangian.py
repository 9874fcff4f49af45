import math

import numpy as np
import pytest

from conftest import UNIT, flat_metric, free_system, kepler_system, metric
from varidyn.errors import LagrangianError
from varidyn.lagrangian import (Domain, LagrangianFn, conjugate_momentum, el_residual,
                                energy_function, homogeneity_check, velocity_hessian)
from varidyn.systems import (NewtonianSystem, closed_form_jacobi, cyclic_momentum, geodesic_lagrangian,
                             newtonian_energy, newtonian_lagrangian)

half_v2 = LagrangianFn(lambda q, v, t: 0.5 * v[0] * v[0], 1, name="half v^2")


def magnetic_system():
    return NewtonianSystem.build(2, V="q1^2 + 0.3*q2", A=["q2", "-q1*q2"],
                                 e=[["2", "0.5"], ["0.5", "1 + q1^2"]], coupling=1.5, c=2.0)


class TestEnergyFunction:
    def test_free_particle(self):
        assert energy_function(half_v2).value([0.0], [2.0]) == pytest.approx(2.0, abs=1e-15)

    def test_quadratic_geodesic_flat(self):
        L = geodesic_lagrangian(flat_metric(), UNIT, "quadratic")
        assert energy_function(L).value([0.0, 0.0], [2.0, 1.0]) == pytest.approx(-1.5, abs=1e-14)

    def test_sqrt_geodesic_flat(self):
        L = geodesic_lagrangian(flat_metric(), UNIT, "sqrt")
        assert energy_function(L).value([0.0], [0.6]) == pytest.approx(1.25, abs=1e-14)

    def test_vanishes_for_homogeneous_lagrangians(self, rng):
        LE, _ = closed_form_jacobi("newtonian", kepler_system(), -0.4)
        G = energy_function(LE)
        worst = 0.0
        for _ in range(100):
            r = rng.uniform(0.5, 2.0)
            a = rng.uniform(0, 2 * math.pi)
            q = [r * math.cos(a), r * math.sin(a)]
            worst = max(worst, abs(G.value(q, list(rng.normal(size=2)))))
        assert worst < 1e-12

    def test_newtonian_matches_closed_form(self, rng):
        sys = magnetic_system()
        G = energy_function(newtonian_lagrangian(sys))
        closed = newtonian_energy(sys)
        for _ in range(100):
            q, v = list(rng.uniform(-1, 1, 2)), list(rng.uniform(-2, 2, 2))
            assert abs(G.value(q, v) - closed.value(q, v)) < 1e-12


class TestMomentum:
    def test_free(self):
        assert conjugate_momentum(half_v2, 0, [0.0], [2.0]) == 2.0

    def test_flat_quadratic_geodesic(self):
        L = geodesic_lagrangian(flat_metric(), UNIT, "quadratic")
        for v1 in (-1.0, 0.0, 2.5):
            assert conjugate_momentum(L, 0, [0.0, 0.3], [3.0, v1]) == pytest.approx(-3.0)

    def test_stationary_shift(self):
        met = metric(1, {(0, 0): "2", (0, 1): "0.5", (1, 1): "-1"})
        L = geodesic_lagrangian(met, UNIT, "quadratic")
        p = conjugate_momentum(L, 0, [0.0, 0.2], [1.0, 2.0])
        assert p == pytest.approx(-3.0, abs=1e-14)
        assert cyclic_momentum(met)([0.2], 1.0, [2.0]) == pytest.approx(-3.0, abs=1e-14)


class TestResidual:
    def test_free_particle(self):
        L = newtonian_lagrangian(free_system())
        assert np.all(el_residual(L, [0.3, -1.0], [1.0, 2.0], [0.0, 0.0]) == 0)

    def test_linear_potential(self):
        L = LagrangianFn(lambda q, v, t: 0.5 * v[0] * v[0] - q[0], 1)
        assert el_residual(L, [0.7], [0.1], [-1.0])[0] == pytest.approx(0.0, abs=1e-15)

    def test_kepler_circular_orbit(self):
        L = newtonian_lagrangian(kepler_system())
        r = 1.3
        q, v = [r, 0.0], [0.0, math.sqrt(1 / r)]
        a = [-r / r ** 3, 0.0]
        assert np.linalg.norm(el_residual(L, q, v, a)) < 1e-12

    def test_linear_in_acceleration(self, rng):
        L = newtonian_lagrangian(magnetic_system())
        for _ in range(20):
            q, v = list(rng.uniform(-1, 1, 2)), list(rng.uniform(-1, 1, 2))
            a1, a2 = rng.normal(size=2), rng.normal(size=2)
            r = (el_residual(L, q, v, a1) + el_residual(L, q, v, a2)
                 - el_residual(L, q, v, a1 + a2) - el_residual(L, q, v, [0.0, 0.0]))
            assert np.max(np.abs(r)) < 1e-12


class TestHessian:
    def test_newtonian_identity(self):
        rep = velocity_hessian(newtonian_lagrangian(free_system(3)), [0.1, 0.2, 0.3], [1, 2, 3])
        assert np.allclose(rep.matrix, np.eye(3), atol=1e-15) and rep.rank == 3
        assert np.all(np.diff(rep.singular_values) <= 0) and np.all(rep.singular_values >= 0)

    def test_jacobi_lagrangian_rank_deficient(self):
        LE, _ = closed_form_jacobi("newtonian", kepler_system(), -0.4)
        assert velocity_hessian(LE, [0.8, 0.3], [0.4, -1.1]).rank == 1

    def test_homogeneous_geodesic_rank(self):
        Lh = geodesic_lagrangian(flat_metric(), UNIT, "homogeneous_sqrt")
        assert velocity_hessian(Lh, [0.0, 0.0], [2.0, 1.0]).rank == 1


class TestHomogeneity:
    def test_norm(self):
        L = LagrangianFn(lambda q, v, t: 2 * (v[0] ** 2 + v[1] ** 2) ** 0.5, 2)
        ok, dev = homogeneity_check(L, [0.0, 0.0], [3.0, 4.0], lambdas=(2.0,))
        assert ok and dev == 0.0

    def test_quadratic_is_not_homogeneous(self):
        ok, dev = homogeneity_check(half_v2, [0.0], [1.0], lambdas=(2.0,))
        assert not ok and dev == pytest.approx(0.5)

    def test_stationary_jacobi_lagrangian(self):
        met = metric(1, {(0, 0): "1 - 0.1/q1", (0, 1): "0.05*q1", (1, 1): "-1 - 0.1/q1"})
        LE, _ = closed_form_jacobi("stationary_sqrt", (met, UNIT), 1.25)
        ok, dev = homogeneity_check(LE, [1.2], [0.7])
        assert ok and dev < 1e-12


class TestFlags:
    def test_false_time_independence_rejected(self):
        with pytest.raises(LagrangianError):
            LagrangianFn(lambda q, v, t: v[0] ** 2 + t, 1, domain=Domain.cube(1))

    def test_false_homogeneity_rejected(self):
        with pytest.raises(LagrangianError):
            LagrangianFn(lambda q, v, t: v[0] ** 2, 1, homogeneous=True, domain=Domain.cube(1))

    def test_time_independence_holds(self):
        L = newtonian_lagrangian(free_system())
        assert L.value([0.1, 0.2], [1.0, 2.0], 0.0) == L.value([0.1, 0.2], [1.0, 2.0], 7.5)
