import json

import numpy as np
import pytest

from varidyn.errors import ScenarioError
from varidyn.scenario import catalog_listing, catalog_names, load_scenario
from varidyn.systems import newtonian_energy

CATALOG = ["flat-minkowski-2d", "flat-newtonian", "harmonic-2d", "kepler-2d", "rotating-frame",
           "static-weakfield"]


def minimal(**over):
    doc = {"system": {"type": "newtonian", "dim": 1, "fields": {"V": "0.5*q1^2"}},
           "constants": {"E": 1.0, "calE": 0.5},
           "initial": {"q": [0.0], "v": [1.0], "t0": 0, "t1": 1}}
    doc.update(over)
    return doc


def test_catalog_names_are_sorted_and_complete():
    assert catalog_names() == CATALOG


@pytest.mark.parametrize("name", CATALOG)
def test_catalog_scenarios_load_with_consistent_constants(name):
    spec = load_scenario(name)
    assert abs(spec.p0 * spec.c + spec.E) < 1e-15
    assert spec.C == -0.5 * spec.selector.epsilon * spec.selector.m ** 2 * spec.c ** 2
    assert spec.routh_offset == spec.calE + 0.5 * spec.selector.epsilon * spec.selector.m ** 2
    G = newtonian_energy(spec.newtonian)
    assert G.value(list(spec.q0), list(spec.v0)) == pytest.approx(spec.calE, abs=1e-14)


def test_listing_is_stable_and_mentions_parameters():
    text = catalog_listing()
    assert text == catalog_listing()
    assert "kepler-2d" in text and "rotating-frame" in text
    assert "param k = 1.0" in text


def test_param_override_rescales_kepler():
    spec = load_scenario({"system": {"type": "catalog", "name": "kepler-2d",
                                     "params": {"k": 2.0}}})
    assert spec.period == pytest.approx(4 * np.pi)
    assert spec.newtonian.V([2.0, 0.0]) == pytest.approx(-1.0)


def test_schema_error_has_pointer():
    doc = minimal(selector={"epsilon": 3})
    with pytest.raises(ScenarioError) as info:
        load_scenario(doc)
    assert info.value.pointer == "/selector/epsilon"


def test_expression_error_has_position():
    doc = minimal()
    doc["system"]["fields"]["V"] = "q1 +"
    with pytest.raises(ScenarioError, match="position 4") as info:
        load_scenario(doc)
    assert info.value.pointer == "/system/fields/V"


def test_forbidden_initial_point():
    with pytest.raises(ScenarioError):
        load_scenario(minimal(initial={"q": [2.0], "v": [1.0], "t0": 0, "t1": 1}))


def test_user_catalog_directory(tmp_path, monkeypatch):
    doc = minimal(name="my-oscillator", description="test entry")
    (tmp_path / "my-oscillator.json").write_text(json.dumps(doc))
    monkeypatch.setenv("VARIDYN_CATALOG_DIR", str(tmp_path))
    assert "my-oscillator" in catalog_names()
    assert load_scenario("my-oscillator").n == 1


def test_metric_scenario_derives_newtonian_side():
    spec = load_scenario("rotating-frame")
    q = [0.3, -0.2]
    g = spec.metric.g.matrix(q)
    A = spec.newtonian.A(q)
    assert A[0] == pytest.approx(-g[0, 1] / g[0, 0] * spec.E, abs=1e-15)
