import math

import numpy as np
import pytest

from conftest import UNIT, flat_metric, free_system, kepler_system, metric
from varidyn.errors import DegenerateInputError, PreconditionError, QuadratureError
from varidyn.integrate import Trajectory, integrate_el
from varidyn.lagrangian import (LagrangianFn, el_residual, energy_function, homogeneity_check,
                                velocity_hessian)
from varidyn.jacobi import (antiderivative_I, inverse_jacobi, jacobi_reduce, reconstruct_time,
                            solve_theta_prime)
from varidyn.systems import (GeodesicSelector, closed_form_jacobi, geodesic_lagrangian,
                             newtonian_energy, newtonian_lagrangian, quadratic_energy,
                             stationary_energy)

FREE = newtonian_lagrangian(free_system())
FREE_G = newtonian_energy(free_system())
KEPLER = newtonian_lagrangian(kepler_system())


def kepler_points(rng, count):
    for _ in range(count):
        r, a = rng.uniform(0.5, 1.5), rng.uniform(0, 2 * math.pi)
        yield [r * math.cos(a), r * math.sin(a)], list(rng.normal(size=2))


class TestThetaPrime:
    def test_free(self):
        assert solve_theta_prime(FREE_G, 2.0, [0.0, 0.0], [3.0, 4.0]) == pytest.approx(2.5)

    def test_quadratic_geodesic(self):
        G = quadratic_energy(flat_metric())
        assert solve_theta_prime(G, -0.5, [0.0, 0.0], [2.0, 1.0]) == \
            pytest.approx(math.sqrt(3), rel=1e-12)

    def test_stationary(self):
        G = stationary_energy(flat_metric(), UNIT)
        assert solve_theta_prime(G, 1.25, [0.0], [1.0]) == pytest.approx(5 / 3, rel=1e-12)

    def test_zero_direction(self):
        with pytest.raises(DegenerateInputError):
            solve_theta_prime(FREE_G, 2.0, [0.0, 0.0], [0.0, 0.0])


class TestJacobiReduce:
    def test_free(self):
        red = jacobi_reduce(FREE, 2.0)
        assert red.reduced.value([0.0, 0.0], [3.0, 4.0]) == pytest.approx(10.0, rel=1e-13)

    def test_quadratic_geodesic(self):
        red = jacobi_reduce(geodesic_lagrangian(flat_metric(), UNIT, "quadratic"), -0.5)
        assert red.reduced.value([0.0, 0.0], [2.0, 1.0]) == pytest.approx(-math.sqrt(3))

    def test_stationary(self):
        red = jacobi_reduce(geodesic_lagrangian(flat_metric(), UNIT, "sqrt"), 1.25)
        assert red.reduced.value([0.0], [1.0]) == pytest.approx(0.75, rel=1e-12)

    def test_homogeneous_input_rejected(self):
        with pytest.raises(PreconditionError):
            jacobi_reduce(geodesic_lagrangian(flat_metric(), UNIT, "homogeneous_sqrt"), -0.5)

    def test_time_dependent_input_rejected(self):
        L = LagrangianFn(lambda q, v, t: 0.5 * v[0] ** 2 * (1 + t), 1, time_independent=False)
        with pytest.raises(PreconditionError):
            jacobi_reduce(L, 1.0)

    def test_structural_properties(self, rng):
        red = jacobi_reduce(KEPLER, -0.3)
        G = newtonian_energy(kepler_system())
        GE = energy_function(red.reduced)
        for q, xp in kepler_points(rng, 100):
            phi = red.phiE(q, xp)
            assert abs(G.value(q, [x / phi for x in xp]) + 0.3) < 1e-11
            assert abs(red.phiE(q, [2.7 * x for x in xp]) - 2.7 * phi) < 1e-12 * (1 + phi)
            direct = (KEPLER.value(q, [x / phi for x in xp]) - 0.3) * phi
            assert abs(red.reduced.value(q, xp) - direct) < 1e-12 * (1 + abs(direct))
            assert homogeneity_check(red.reduced, q, xp)[0]
        for q, xp in list(kepler_points(rng, 20)):
            assert abs(GE.value(q, xp)) < 1e-11
            assert velocity_hessian(red.reduced, q, xp).rank == 1

    @pytest.mark.parametrize("family", ["newtonian", "stationary_sqrt", "quadratic_geodesic"])
    def test_matches_closed_form(self, family, rng):
        if family == "newtonian":
            L, E, params = KEPLER, -0.3, kepler_system()
            pts = list(kepler_points(rng, 100))
        else:
            met = metric(1, {(0, 0): "1 - 0.1/q1", (0, 1): "0.05*q1", (1, 1): "-1 - 0.1/q1"})
            q1 = rng.uniform(0.8, 1.5, 100)
            if family == "stationary_sqrt":
                L, E, params = geodesic_lagrangian(met, UNIT, "sqrt"), 1.25, (met, UNIT)
                pts = [([a], [rng.choice([-1, 1]) * rng.uniform(0.2, 2.0)]) for a in q1]
            else:
                L, E, params = geodesic_lagrangian(met, UNIT, "quadratic"), UNIT.C, (met, UNIT)
                pts = [([rng.uniform(-1, 1), a], [rng.uniform(1.0, 2.0), rng.uniform(-0.4, 0.4)])
                       for a in q1]
        numeric = jacobi_reduce(L, E).reduced
        closed, _ = closed_form_jacobi(family, params, E)
        worst = max(abs(numeric.value(q, v) - closed.value(q, v)) for q, v in pts)
        assert worst < 1e-10

    def test_spacelike_quadratic_matches_closed_form(self, rng):
        met = metric(1, {(0, 0): "1 - 0.1/q1", (0, 1): "0.05*q1", (1, 1): "-1 - 0.1/q1"})
        sel = GeodesicSelector(m=1.0, epsilon=-1, c=1.0)
        L = geodesic_lagrangian(met, sel, "quadratic")
        pts = [([rng.uniform(-1, 1), rng.uniform(0.8, 1.5)],
                [rng.uniform(-0.4, 0.4), rng.choice([-1, 1]) * rng.uniform(1.0, 2.0)])
               for _ in range(50)]
        numeric = jacobi_reduce(L, sel.C).reduced
        closed, _ = closed_form_jacobi("quadratic_geodesic", (met, sel), sel.C)
        assert max(abs(numeric.value(q, v) - closed.value(q, v)) for q, v in pts) < 1e-10

    def test_orbit_euler_lagrange_residual_vanishes(self):
        E = -0.5
        traj = integrate_el(KEPLER, [0.7, 0.0], [0.0, math.sqrt(1.3 / 0.7)], 0.0, 6.0)
        red = jacobi_reduce(KEPLER, E)
        worst = 0.0
        for k in range(0, len(traj), 7):
            q, v, a = traj.q[k], traj.v[k], traj.a[k]
            # reparametrize with dt/dtau = 2 + sin(tau), evaluated at tau = t
            tp, tpp = 2 + math.sin(traj.t[k]), math.cos(traj.t[k])
            xp, xpp = v * tp, a * tp ** 2 + v * tpp
            r = el_residual(red.reduced, list(q), list(xp), list(xpp))
            ortho = r - (r @ xp) / (xp @ xp) * xp
            worst = max(worst, float(np.linalg.norm(ortho)))
        assert worst < 1e-7


class TestReconstructTime:
    def test_free_particle_speed(self):
        tau = np.linspace(0, 1, 21)
        orbit = Trajectory(tau, np.column_stack([3 * tau, 4 * tau]),
                           np.tile([3.0, 4.0], (21, 1)), np.zeros((21, 2)))
        traj = reconstruct_time(jacobi_reduce(FREE, 2.0), orbit, t0=1.0)
        assert np.allclose(np.linalg.norm(traj.v, axis=1), 2.0, atol=1e-12)
        assert traj.t[-1] == pytest.approx(1.0 + 2.5, rel=1e-12)

    def test_unit_rate_sampling(self):
        tau = np.linspace(0, 2, 41)
        d = np.array([0.6, 0.8]) * 2.0  # |x'| = sqrt(2E) makes phi_E = 1
        orbit = Trajectory(tau, np.outer(tau, d), np.tile(d, (41, 1)), np.zeros((41, 2)))
        traj = reconstruct_time(jacobi_reduce(FREE, 2.0), orbit, t0=0.5)
        assert np.allclose(traj.t, 0.5 + tau, atol=1e-13)


class TestAntiderivative:
    def test_quadratic_energy(self):
        G = FREE_G
        c = [0.6, 0.8]
        I = antiderivative_I(G, [0.0, 0.0], c, 1.0)
        assert I(3.0) == pytest.approx(0.5 * 1.0 * (3.0 - 1.0), abs=1e-11)

    def test_constant_energy(self):
        from varidyn.lagrangian import EnergyFn
        G = EnergyFn(lambda q, v: 0.0 * v[0] + 1.5, 1)
        I = antiderivative_I(G, [0.0], [1.0], 0.5)
        assert I(2.0) == pytest.approx(1.5 * (1 / 0.5 - 1 / 2.0), abs=1e-11)
        assert I(0.5) == 0.0

    def test_nonpositive_lower_limit(self):
        with pytest.raises(QuadratureError):
            antiderivative_I(FREE_G, [0.0, 0.0], [1.0, 0.0], 0.0)


class TestInverseJacobi:
    def test_homogeneous_geodesic(self):
        Lh = geodesic_lagrangian(flat_metric(), UNIT, "homogeneous_sqrt")
        L = inverse_jacobi(Lh, quadratic_energy(flat_metric()), -0.5)
        assert L.value([0.0, 0.0], [2.0, 1.0]) == pytest.approx(-1.5, abs=1e-10)

    def test_free_newtonian(self):
        LE, _ = closed_form_jacobi("newtonian", free_system(), 2.0)
        L = inverse_jacobi(LE, FREE_G, 2.0)
        assert L.value([0.0, 0.0], [3.0, 4.0]) == pytest.approx(12.5, abs=1e-10)

    def test_round_trip_newtonian(self, rng):
        G = newtonian_energy(kepler_system())
        back = inverse_jacobi(jacobi_reduce(KEPLER, -0.3).reduced, G, -0.3)
        worst = max(abs(back.value(q, v) - KEPLER.value(q, v)) for q, v in kepler_points(rng, 100))
        assert worst < 1e-9

    def test_lower_limit_independence(self, rng):
        LE, _ = closed_form_jacobi("newtonian", kepler_system(), -0.3)
        G = newtonian_energy(kepler_system())
        a = inverse_jacobi(LE, G, -0.3, rho0=0.3)
        b = inverse_jacobi(LE, G, -0.3, rho0=2.0)
        for q, v in kepler_points(rng, 20):
            assert abs(a.value(q, v) - b.value(q, v)) < 1e-10

    def test_degenerate_direction(self):
        LE, _ = closed_form_jacobi("newtonian", free_system(), 2.0)
        with pytest.raises(DegenerateInputError):
            inverse_jacobi(LE, FREE_G, 2.0).value([0.0, 0.0], [0.0, 0.0])
