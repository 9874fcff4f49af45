import numpy as np
import pytest

from conftest import UNIT, flat_metric, metric
from varidyn.errors import LagrangianError, NoBracketError, PreconditionError
from varidyn.integrate import integrate_el, monitor_conserved
from varidyn.lagrangian import Domain, LagrangianFn
from varidyn.routh import (drift_reconstruct, inverse_routh, require_coupling, routh_reduce,
                           solve_cyclic_velocity)
from varidyn.systems import cyclic_momentum, geodesic_lagrangian, routh_closed_form

FLAT = geodesic_lagrangian(flat_metric(), UNIT, "quadratic")
STATIC = metric(1, {(0, 0): "1 - 1/q1", (1, 1): "-1"})


def shifted_metric():
    return metric(2, {(0, 0): "1 - 0.2/sqrt(q1^2 + q2^2)", (0, 1): "0.1*q2", (0, 2): "-0.1*q1",
                      (1, 1): "-1", (2, 2): "-1 - 0.1*q1^2"})


class TestSolveCyclicVelocity:
    def test_flat(self):
        assert solve_cyclic_velocity(FLAT, 0, 1.0, [0.0], [0.4]) == pytest.approx(-1.0)

    def test_shifted(self):
        met = metric(1, {(0, 0): "2", (0, 1): "0.5", (1, 1): "-1"})
        L = geodesic_lagrangian(met, UNIT, "quadratic")
        assert solve_cyclic_velocity(L, 0, -3.0, [0.0], [2.0]) == pytest.approx(1.0, abs=1e-13)

    def test_trivial_kinetic_term(self):
        L = LagrangianFn(lambda q, v, t: 0.5 * v[0] ** 2 + 0.5 * v[1] ** 2, 2)
        assert solve_cyclic_velocity(L, 0, 7.0, [0.0], [1.0]) == pytest.approx(7.0)

    def test_residual_meets_tolerance(self, rng):
        met = shifted_metric()
        L = geodesic_lagrangian(met, UNIT, "quadratic")
        P = cyclic_momentum(met)
        for _ in range(20):
            q, v = list(rng.uniform(0.6, 1.2, 2)), list(rng.uniform(-0.5, 0.5, 2))
            w = solve_cyclic_velocity(L, 0, -1.1, q, v, seed=1.0)
            assert abs(P(q, w, v) + 1.1) < 1e-11 * 2.1

    def test_no_bracket(self):
        L = LagrangianFn(lambda q, v, t: v[0] + 0.5 * v[1] ** 2, 2)  # P0 = 1 for every w
        with pytest.raises(NoBracketError):
            solve_cyclic_velocity(L, 0, 2.0, [0.0], [0.0])


class TestRouthReduce:
    def test_flat_closed_form(self):
        red = routh_reduce(FLAT, 0, 1.0, seed=-1.0)
        assert red.reduced.value([0.0], [2.0]) == pytest.approx(2.5, abs=1e-13)

    def test_momentum_free(self, rng):
        met = metric(2, {(0, 0): "1 + 0.1*q1^2", (1, 1): "-1 - q2^2", (2, 2): "-2"})
        red = routh_reduce(geodesic_lagrangian(met, UNIT, "quadratic"), 0, 0.0)
        for _ in range(10):
            q, v = list(rng.uniform(-1, 1, 2)), list(rng.uniform(-1, 1, 2))
            gamma = np.diag([1 + q[1] ** 2, 2.0])
            vv = np.array(v)
            assert red.reduced.value(q, v) == pytest.approx(0.5 * vv @ gamma @ vv, abs=1e-13)

    def test_static_metric(self):
        red = routh_reduce(geodesic_lagrangian(STATIC, UNIT, "quadratic"), 0, 1.0, seed=1.0,
                           check=False)
        assert red.reduced.value([2.0], [0.0]) == pytest.approx(1.0, abs=1e-13)

    def test_routh_function_identity(self, rng):
        met = shifted_metric()
        L = geodesic_lagrangian(met, UNIT, "quadratic")
        red = routh_reduce(L, 0, -1.1, seed=1.0)
        for _ in range(20):
            q, v = list(rng.uniform(0.6, 1.2, 2)), list(rng.uniform(-0.5, 0.5, 2))
            w = red.phi(q, v)
            direct = L.value([0.0] + q, [w] + v) - w * (-1.1)
            assert abs(red.reduced.value(q, v) - direct) < 1e-12 * (1 + abs(direct))

    def test_matches_closed_form(self, rng):
        met = shifted_metric()
        red = routh_reduce(geodesic_lagrangian(met, UNIT, "quadratic"), 0, -1.1, seed=1.0)
        closed = routh_closed_form(met, -1.1)
        for _ in range(100):
            q, v = list(rng.uniform(0.6, 1.2, 2)), list(rng.uniform(-0.5, 0.5, 2))
            assert abs(red.reduced.value(q, v) - closed.value(q, v)) < 1e-10

    def test_derivatives_match_finite_differences(self, rng):
        met = shifted_metric()
        red = routh_reduce(geodesic_lagrangian(met, UNIT, "quadratic"), 0, -1.1, seed=1.0)
        R = red.reduced
        h = 1e-6
        for _ in range(10):
            z = np.concatenate([rng.uniform(0.6, 1.2, 2), rng.uniform(-0.5, 0.5, 2)])
            jet = R.jet(list(z[:2]), list(z[2:]))
            grad = np.concatenate([jet.q, jet.v])
            for k in range(4):
                e = np.zeros(4)
                e[k] = h
                fd = (R.value(list((z + e)[:2]), list((z + e)[2:]))
                      - R.value(list((z - e)[:2]), list((z - e)[2:]))) / (2 * h)
                assert abs(fd - grad[k]) <= 1e-6 * max(1.0, abs(grad[k]))

    def test_cyclicity_violation(self):
        L = LagrangianFn(lambda q, v, t: 0.5 * v[0] ** 2 + 0.5 * v[1] ** 2 - q[0], 2,
                         domain=Domain.cube(2))
        with pytest.raises(LagrangianError):
            routh_reduce(L, 0, 1.0)


class TestDrift:
    def test_flat_drift(self):
        red = routh_reduce(FLAT, 0, 1.0, seed=-1.0)
        traj = integrate_el(red.reduced, [0.0], [0.5], 0.0, 3.0)
        lifted = drift_reconstruct(red, traj, q0_initial=0.25)
        assert np.max(np.abs(lifted.q[:, 0] - (0.25 - traj.t))) < 1e-12

    def test_zero_momentum_keeps_cyclic_coordinate(self):
        red = routh_reduce(FLAT, 0, 0.0)
        traj = integrate_el(red.reduced, [0.0], [0.5], 0.0, 1.0)
        assert np.max(np.abs(drift_reconstruct(red, traj).q[:, 0])) < 1e-14

    def test_matches_full_integration(self):
        met = shifted_metric()
        L = geodesic_lagrangian(met, UNIT, "quadratic")
        p0 = -1.1
        q0, v0 = [0.9, 0.1], [0.05, 0.3]
        w0 = solve_cyclic_velocity(L, 0, p0, q0, v0, seed=1.0)
        full = integrate_el(L, [0.0] + q0, [w0] + v0, 0.0, 3.0)
        red = routh_reduce(L, 0, p0, seed=1.0)
        lifted = drift_reconstruct(red, integrate_el(red.reduced, q0, v0, 0.0, 3.0))
        qf, _ = full.interpolate(lifted.t)
        assert np.max(np.abs(qf - lifted.q)) < 1e-7
        assert monitor_conserved(full, lambda q, v, t: cyclic_momentum(met)(
            list(q[1:]), v[0], list(v[1:]))) < 1e-8


class TestInverseRouth:
    def test_flat_hand_evaluation(self):
        Lred = LagrangianFn(lambda q, v, t: 0.5 * v[0] ** 2 + 0.5, 1)
        L = inverse_routh(Lred, lambda q, w, v, t=0.0: -w, 1.0)
        assert L.value([0.0, 0.0], [3.0, 2.0]) == pytest.approx(-2.5, abs=1e-11)

    def test_linear_momentum(self):
        Lred = LagrangianFn(lambda q, v, t: 0.0 * v[0], 1)
        L = inverse_routh(Lred, lambda q, w, v, t=0.0: w, 0.0)
        assert L.value([0.0, 0.3], [1.7, -0.2]) == pytest.approx(0.5 * 1.7 ** 2, abs=1e-11)

    def test_round_trips(self, rng):
        met = shifted_metric()
        P = cyclic_momentum(met)
        L = geodesic_lagrangian(met, UNIT, "quadratic")
        red = routh_reduce(L, 0, -1.1, seed=1.0)
        back = inverse_routh(red.reduced, P, -1.1, seed=1.0)
        closed = routh_closed_form(met, -1.1)
        again = routh_reduce(inverse_routh(closed, P, -1.1, seed=1.0), 0, -1.1, seed=1.0)
        for _ in range(100):
            q = list(rng.uniform(0.6, 1.2, 2))
            u = [rng.uniform(0.5, 2.0)] + list(rng.uniform(-0.5, 0.5, 2))
            assert abs(back.value([0.0] + q, u) - L.value([0.0] + q, u)) < 1e-10
            v = u[1:]
            assert abs(again.reduced.value(q, v) - closed.value(q, v)) < 1e-10


def test_coupling_precondition():
    require_coupling(-1.25, 1.25, 1.0)
    with pytest.raises(PreconditionError, match="p0\\*c = -E"):
        require_coupling(1.0, 1.25, 1.0)
