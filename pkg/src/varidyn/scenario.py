"""Scenario files: JSON loading, schema validation, catalog lookup and assembly.

A scenario names one system (Newtonian or stationary metric, given by field
expressions or by catalog name), the geodesic selector, the constants
``E``, ``calE`` and ``p0``, initial data for the Newtonian motion and boxes
for the pointwise comparison grids.  The other family is derived through
the identification maps, so every scenario carries both pictures.

Strings anywhere in numeric slots are constant expressions; ``{name}``
placeholders are replaced by scenario parameters before parsing.
"""

from __future__ import annotations

import copy
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import expr as X
from .errors import ExpressionSyntaxError, ScenarioError, UnknownSymbolError, VaridynError
from .fields import CovectorField, ScalarField, SymTensorField
from .lagrangian import Domain
from .systems import (GeodesicSelector, NewtonianSystem, StationaryMetric, metric_to_newtonian,
                      newtonian_to_metric, routh_constant)

CATALOG_ENV = "VARIDYN_CATALOG_DIR"
DEFAULT_TOLERANCES = {"lagrangian": 1e-9, "orbit": 1e-6, "drift": 1e-8, "integrate": 1e-12,
                      "periods": 10.0}
_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_TENSOR_KEY = re.compile(r"^([eg])(\d+),?(\d+)$")
_VECTOR_KEY = re.compile(r"^A(\d+)$")


def _schema():
    text = resources.files("varidyn").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate_document(doc: dict):
    """Raise :class:`ScenarioError` with a JSON pointer for the first schema violation."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ScenarioError(err.message, _pointer(err.absolute_path))


# -- catalog -----------------------------------------------------------------

def _catalog_dirs():
    dirs = []
    user = os.environ.get(CATALOG_ENV)
    if user:
        dirs.extend(Path(p) for p in user.split(os.pathsep) if p)
    return dirs


def catalog_entries() -> dict:
    """Name -> document for built-in and user catalogs (user entries win)."""
    out = {}
    pkg = resources.files("varidyn").joinpath("catalog")
    for item in sorted(pkg.iterdir(), key=lambda p: p.name):
        if item.name.endswith(".json"):
            doc = json.loads(item.read_text())
            out[doc.get("name", item.name[:-5])] = doc
    for d in _catalog_dirs():
        if not d.is_dir():
            continue
        for path in sorted(d.glob("*.json")):
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"catalog file {path} is not valid JSON: {exc}") from exc
            out[doc.get("name", path.stem)] = doc
    return dict(sorted(out.items()))


def catalog_names() -> list[str]:
    return list(catalog_entries())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_catalog(doc: dict) -> dict:
    """Replace a ``{"type": "catalog"}`` system by the catalog document, keeping overrides."""
    system = doc["system"]
    if system["type"] != "catalog":
        return doc
    entries = catalog_entries()
    name = system["name"]
    if name not in entries:
        raise ScenarioError(f"unknown catalog scenario {name!r}; known: {', '.join(entries)}",
                            "/system/name")
    base = entries[name]
    validate_document(base)
    over = {k: v for k, v in doc.items() if k != "system"}
    merged = _merge(base, over)
    params = dict(merged.get("params", {}))
    for key, val in system.get("params", {}).items():
        if key not in params:
            raise ScenarioError(f"catalog scenario {name!r} has no parameter {key!r}",
                                f"/system/params/{key}")
        params[key] = dict(params[key], default=val)
    merged["params"] = params
    if "coupling" in system:
        merged["system"]["coupling"] = system["coupling"]
    return merged


# -- expression helpers ------------------------------------------------------

def _substitute(text: str, params: dict, pointer: str) -> str:
    def repl(m):
        key = m.group(1)
        if key not in params:
            raise ScenarioError(f"unknown parameter {{{key}}}", pointer)
        return repr(float(params[key]))
    return _PLACEHOLDER.sub(repl, text)


def _number(x, params: dict, pointer: str) -> float:
    if isinstance(x, bool):
        raise ScenarioError("expected a number", pointer)
    if isinstance(x, (int, float)):
        return float(x)
    text = _substitute(x, params, pointer)
    try:
        node = X.parse_expression(text, 0)
        val = float(X.compile_node(node)([]))
    except ExpressionSyntaxError as exc:
        raise ScenarioError(f"{exc} in {text!r}", pointer) from exc
    except (UnknownSymbolError, VaridynError) as exc:
        raise ScenarioError(f"{exc} in {text!r}", pointer) from exc
    if not math.isfinite(val):
        raise ScenarioError(f"expression {text!r} is not finite", pointer)
    return val


def _field(x, dim: int, params: dict, pointer: str) -> ScalarField:
    text = repr(float(x)) if isinstance(x, (int, float)) else _substitute(x, params, pointer)
    try:
        return ScalarField(dim, text)
    except ExpressionSyntaxError as exc:
        raise ScenarioError(f"{exc} in {text!r}", pointer) from exc
    except VaridynError as exc:
        raise ScenarioError(f"{exc} in {text!r}", pointer) from exc


def _vector(xs, n, params, pointer, what):
    if len(xs) != n:
        raise ScenarioError(f"{what} needs {n} entries, got {len(xs)}", pointer)
    return np.array([_number(x, params, f"{pointer}/{i}") for i, x in enumerate(xs)])


def _box(b, n, params, pointer):
    lo = _vector(b[0], n, params, pointer + "/0", "box lower corner")
    hi = _vector(b[1], n, params, pointer + "/1", "box upper corner")
    if np.any(lo >= hi):
        raise ScenarioError("box lower corner must be below the upper corner", pointer)
    return lo, hi


# -- assembled scenario ------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    """Fully resolved scenario with both the Newtonian and the metric picture."""

    name: str
    kind: str
    newtonian: NewtonianSystem
    metric: StationaryMetric
    selector: GeodesicSelector
    E: float
    calE: float
    p0: float
    q0: np.ndarray
    v0: np.ndarray
    t0: float = 0.0
    t1: float = 1.0
    period: float | None = None
    closed: bool = False
    q_box: tuple | None = None
    v_box: tuple | None = None
    vc_box: tuple | None = None
    lift_scale: tuple = (0.6, 1.8)
    margin: float = 0.05
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    fermat: dict | None = None
    document: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.newtonian.n

    @property
    def c(self) -> float:
        return self.selector.c

    @property
    def C(self) -> float:
        return self.selector.C

    @property
    def routh_offset(self) -> float:
        """``calE + 1/2 eps m^2 c^2``."""
        return routh_constant(self.selector, self.calE)

    def with_constants(self, **changes) -> "ScenarioSpec":
        """Copy with selected constants replaced (systems are not re-derived)."""
        d = dict(self.__dict__)
        d.update(changes)
        return ScenarioSpec(**d)


def _build_newtonian(system, params, n):
    fields = system["fields"]
    e_upper, A, V = {}, [0.0] * n, 0.0
    for key, val in fields.items():
        ptr = f"/system/fields/{key}"
        if key == "V":
            V = _field(val, n, params, ptr)
            continue
        m = _VECTOR_KEY.match(key)
        if m:
            k = int(m.group(1))
            if not 1 <= k <= n:
                raise ScenarioError(f"component {key} out of range for dim {n}", ptr)
            A[k - 1] = _field(val, n, params, ptr)
            continue
        m = _TENSOR_KEY.match(key)
        if m and m.group(1) == "e":
            i, j = sorted((int(m.group(2)), int(m.group(3))))
            if not (1 <= i <= n and 1 <= j <= n):
                raise ScenarioError(f"component {key} out of range for dim {n}", ptr)
            e_upper[i - 1, j - 1] = _field(val, n, params, ptr)
            continue
        raise ScenarioError(f"unknown Newtonian field {key!r} (use V, A<k>, e<i><j>)", ptr)
    for i in range(n):
        e_upper.setdefault((i, i), 1.0)
    e = SymTensorField.from_upper(n, e_upper, n)
    return e, CovectorField(n, A), V if isinstance(V, ScalarField) else ScalarField.constant(V, n)


def _build_metric(system, params, n):
    upper = {}
    for key, val in system["fields"].items():
        ptr = f"/system/fields/{key}"
        m = _TENSOR_KEY.match(key)
        if not m or m.group(1) != "g":
            raise ScenarioError(f"unknown metric field {key!r} (use g<a><b>)", ptr)
        a, b = sorted((int(m.group(2)), int(m.group(3))))
        if not (0 <= a <= n and 0 <= b <= n):
            raise ScenarioError(f"component {key} out of range for dim {n}", ptr)
        upper[a, b] = _field(val, n, params, ptr)
    for a in range(n + 1):
        if (a, a) not in upper:
            raise ScenarioError(f"metric needs the diagonal component g{a}{a}", "/system/fields")
    return SymTensorField.from_upper(n, upper, n + 1)


def build_scenario(doc: dict, source: str = "") -> ScenarioSpec:
    """Validate and assemble a scenario document."""
    validate_document(doc)
    doc = resolve_catalog(doc)
    validate_document(doc)
    params = {k: v["default"] for k, v in doc.get("params", {}).items()}
    system = doc["system"]
    n = int(system["dim"])
    sel_doc = doc.get("selector", {})
    sel = GeodesicSelector(m=_number(sel_doc.get("m", 1.0), params, "/selector/m"),
                           epsilon=int(sel_doc.get("epsilon", 1)),
                           c=_number(sel_doc.get("c", 1.0), params, "/selector/c"))
    c = sel.c
    coupling = _number(system.get("coupling", 1.0), params, "/system/coupling")
    consts = doc.get("constants", {})
    E = _number(consts.get("E", 1.0), params, "/constants/E")
    kind = system["type"]

    grid = doc.get("grid", {})
    q_box = _box(grid["q"], n, params, "/grid/q") if "q" in grid else (-np.ones(n), np.ones(n))
    v_box = _box(grid["v"], n, params, "/grid/v") if "v" in grid else (-np.ones(n), np.ones(n))
    vc_box = (_box(grid["vc"], n, params, "/grid/vc") if "vc" in grid
              else (-0.3 * c * np.ones(n), 0.3 * c * np.ones(n)))
    lift = tuple(_number(x, params, f"/grid/lift_scale/{i}")
                 for i, x in enumerate(grid.get("lift_scale", [0.6, 1.8])))
    margin = float(grid.get("margin", 0.05))
    dom_n = Domain(tuple(q_box[0]), tuple(q_box[1]), tuple(v_box[0]), tuple(v_box[1]))
    dom_m = Domain(tuple(q_box[0]), tuple(q_box[1]), tuple(vc_box[0]), tuple(vc_box[1]))
    label = doc.get("name", source or "scenario")

    try:
        if kind == "newtonian":
            e, A, V = _build_newtonian(system, params, n)
            newt = NewtonianSystem(n, e, A, V, coupling=coupling, c=c, domain=dom_n, name=label)
            if "calE" not in consts:
                raise ScenarioError("Newtonian scenarios need constants/calE", "/constants")
            calE = _number(consts["calE"], params, "/constants/calE")
            met = newtonian_to_metric(newt, sel, E, calE, name=label)
            met = StationaryMetric(n, met.g, c=c, domain=dom_m, name=label)
        else:
            g = _build_metric(system, params, n)
            met = StationaryMetric(n, g, c=c, domain=dom_m, name=label)
            calE = (_number(consts["calE"], params, "/constants/calE") if "calE" in consts
                    else E ** 2 / (2 * c ** 2) - 0.5 * sel.epsilon * sel.m ** 2 * c ** 2)
            newt = metric_to_newtonian(met, sel, E, calE, coupling=coupling, name=label)
            newt = NewtonianSystem(n, newt.e, newt.A, newt.V, coupling=coupling, c=c,
                                   domain=dom_n, name=label)
    except ScenarioError:
        raise
    except VaridynError as exc:
        raise ScenarioError(str(exc), "/system") from exc

    p0 = _number(consts.get("p0", -E / c), params, "/constants/p0")

    init = doc.get("initial", {})
    q0 = _vector(init.get("q", [0.0] * n), n, params, "/initial/q", "initial q")
    v0 = _vector(init.get("v", [1.0] + [0.0] * (n - 1)), n, params, "/initial/v", "initial v")
    if init.get("normalize_energy", True):
        v0 = _normalize_energy(newt, q0, v0, calE)
    t0 = _number(init.get("t0", 0.0), params, "/initial/t0")
    t1 = _number(init.get("t1", t0 + 1.0), params, "/initial/t1")
    if not t1 > t0:
        raise ScenarioError("integration window needs t1 > t0", "/initial/t1")
    period = _number(init["period"], params, "/initial/period") if "period" in init else None

    tol = dict(DEFAULT_TOLERANCES)
    tol.update({k: float(v) for k, v in doc.get("tolerances", {}).items()})

    fermat = None
    if "fermat" in doc:
        f = doc["fermat"]
        fermat = {
            "q": _vector(f.get("q", list(q0)), n, params, "/fermat/q", "fermat q"),
            "direction": _vector(f.get("direction", list(v0)), n, params, "/fermat/direction",
                                 "fermat direction"),
            "t1": _number(f.get("t1", t1 - t0), params, "/fermat/t1"),
        }

    return ScenarioSpec(name=label, kind=kind, newtonian=newt, metric=met, selector=sel, E=E,
                        calE=calE, p0=p0, q0=q0, v0=v0, t0=t0, t1=t1, period=period,
                        closed=bool(init.get("closed", False)), q_box=q_box, v_box=v_box,
                        vc_box=vc_box, lift_scale=lift, margin=margin, tolerances=tol,
                        fermat=fermat, document=doc)


def _normalize_energy(sys: NewtonianSystem, q, v, calE) -> np.ndarray:
    """Rescale ``v`` so that ``1/2 e v v + V = calE`` (the magnetic term carries no energy)."""
    qs = [float(x) for x in q]
    gap = calE - float(sys.V(qs))
    kin = float(np.asarray(v) @ sys.e.matrix(qs) @ np.asarray(v))
    if not gap > 0:
        raise ScenarioError(f"initial point lies in the forbidden region (calE - V = {gap:.3g})",
                            "/initial/q")
    if not kin > 0:
        raise ScenarioError("initial velocity must be nonzero", "/initial/v")
    return np.asarray(v, float) * math.sqrt(2 * gap / kin)


def load_scenario(path_or_doc) -> ScenarioSpec:
    """Load from a path, a JSON string, a dict, or a catalog name."""
    if isinstance(path_or_doc, dict):
        return build_scenario(path_or_doc)
    text = str(path_or_doc)
    if text in catalog_entries():
        return build_scenario({"system": {"type": "catalog", "name": text}}, text)
    p = Path(text)
    try:
        raw = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {p}: {exc.strerror}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object", "/")
    return build_scenario(doc, p.stem)


def catalog_listing() -> str:
    """Names, descriptions and parameter schemas of every catalog scenario."""
    lines = []
    for name, doc in catalog_entries().items():
        lines.append(f"{name}: {doc.get('description', '')}".rstrip())
        lines.append(f"  system: {doc['system']['type']}, dim {doc['system'].get('dim', '?')}")
        for key, spec in sorted(doc.get("params", {}).items()):
            lines.append(f"  param {key} = {spec['default']!r}  {spec.get('doc', '')}".rstrip())
    return "\n".join(lines) + "\n"
