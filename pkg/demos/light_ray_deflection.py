"""Light rays in a weak static field: Fermat's principle vs null geodesics.

The m = 0 energy-reduced Lagrangian of a static metric is the optical length
``n(q) |dq|`` with refractive index ``n = sqrt(-g_ii / g00)``; its orbits
must coincide with the spatial projections of null geodesics.  The script
reports that agreement, then measures the deflection of rays passing the
mass at several impact parameters and compares with ``4 k / b``.

Usage: python demos/light_ray_deflection.py
"""

import math

import numpy as np

from varidyn.diagram import fermat_check
from varidyn.integrate import integrate_el
from varidyn.scenario import load_scenario
from varidyn.systems import GeodesicSelector, geodesic_lagrangian

spec = load_scenario("static-weakfield")
print(f"Fermat orbit vs null geodesic: distance {fermat_check(spec).value:.2e}")

k_small = 1e-3  # weak enough for the linear formula
spec = load_scenario({"system": {"type": "catalog", "name": "static-weakfield",
                                 "params": {"k": k_small}}})
light = geodesic_lagrangian(spec.metric, GeodesicSelector(0.0, 1, spec.c), "quadratic")
for b in (0.5, 1.0, 2.0):
    start = 60.0
    x0 = [0.0, -start, b]
    # null tangent: g00 u0^2 + g11 u1^2 = 0 with u = (u0, 1, 0)
    g = spec.metric.g.matrix(np.array(x0[1:]))
    u0 = math.sqrt(-g[1, 1] / g[0, 0])
    ray = integrate_el(light, x0, [u0, 1.0, 0.0], 0.0, 2 * start, tol=1e-12)
    vx, vy = ray.v[-1, 1], ray.v[-1, 2]
    bend = -math.atan2(vy, vx)
    print(f"impact parameter {b:3.1f}: deflection {bend:.3e}  (4k/b = {4 * k_small / b:.3e})")
