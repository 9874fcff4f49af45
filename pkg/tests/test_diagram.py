import json

import numpy as np
import pytest

from varidyn.diagram import (LOOPS, conic_residual, discrepancy, energy_audit, lifted_grid,
                             newtonian_grid, run_loop, verify_commuting_diagram)
from varidyn.errors import EdgeError, PreconditionError
from varidyn.scenario import load_scenario


@pytest.fixture(scope="module")
def flat():
    return load_scenario("flat-minkowski-2d")


@pytest.mark.parametrize("which", LOOPS)
def test_flat_loops_are_exact(flat, which):
    rep = run_loop(flat, which, points=2000)
    for c in rep.edges[which]:
        assert c.value < 1e-10, c.name
    for name, c in rep.orbits.items():
        assert c.value < 1e-9, name


@pytest.mark.parametrize("which", LOOPS)
def test_static_weakfield_loops(which):
    spec = load_scenario("static-weakfield")
    rep = run_loop(spec, which)
    assert all(c.value < 1e-9 for c in rep.edges[which])
    assert all(c.value < 1e-6 for c in rep.orbits.values())


def test_loops_record_auxiliary_pairs(flat):
    rep = run_loop(flat, "loop85", points=500, orbits=False)
    details = [c.detail.get("auxiliary") for c in rep.edges["loop85"]]
    assert sum(d is not None for d in details) >= 2


def test_incompatible_constants(flat):
    bad = flat.with_constants(p0=0.5)
    with pytest.raises(PreconditionError, match="coupling"):
        run_loop(bad, "loop85")


def test_edge_errors_name_the_edge():
    doc = {"system": {"type": "catalog", "name": "flat-minkowski-2d"},
           "grid": {"vc": [[1.5, 1.5], [2.0, 2.0]]}}
    with pytest.raises(EdgeError) as info:
        run_loop(load_scenario(doc), "loop77", points=100, orbits=False)
    assert info.value.edge


def test_grids_respect_admissibility(flat):
    q, v = newtonian_grid(flat, 500, 0)
    assert len(q[0]) == 500
    x, u = lifted_grid(flat, 500, 0)
    norm = u[0] ** 2 - u[1] ** 2 - u[2] ** 2
    assert np.all(norm > 0)


def test_discrepancy_scaling():
    assert discrepancy([1.0, 3.0], [1.0, 1.0]) == 1.0
    assert discrepancy([np.nan], [1.0]) == np.inf


def test_conic_residual_of_an_ellipse():
    t = np.linspace(0, 2 * np.pi, 300)
    pts = np.column_stack([0.3 + 2 * np.cos(t), -1 + np.sin(t)])
    res, disc = conic_residual(pts)
    assert res < 1e-12 and disc < 0


def test_full_diagram_on_flat_scenario(flat):
    rep = verify_commuting_diagram(flat, points=2000)
    assert rep.passed, rep.failures()
    assert all(c.value < 1e-9 for c in rep.orbits.values())
    assert rep.checks["epsilon-sign"].passed


def test_report_json_is_deterministic(flat):
    a = verify_commuting_diagram(flat, points=1000, seed=3).to_json()
    b = verify_commuting_diagram(flat, points=1000, seed=3).to_json()
    assert a == b
    assert list(json.loads(a)) == sorted(json.loads(a))


def test_energy_audit_reports_all_first_integrals(flat):
    rep = energy_audit(flat, periods=2)
    assert set(rep.drifts) == {"calG", "Gq", "P0", "G", "projected"}
    assert rep.passed


@pytest.mark.slow
def test_energy_audit_reports_motion_leaving_the_chart():
    # free motion seen from a rotating frame crosses the light cylinder r = c/w
    with pytest.raises(EdgeError, match="audit window"):
        energy_audit(load_scenario("rotating-frame"), periods=10)
