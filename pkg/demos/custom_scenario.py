"""Write a scenario file for a new system and check the full diagram on it.

The system is an anharmonic well with a uniform magnetic field; the stationary
metric side is derived automatically.

Usage: python demos/custom_scenario.py [OUT_DIR]
"""

import json
import sys
import tempfile
from pathlib import Path

from varidyn.cli import main

scenario = {
    "name": "anharmonic-magnetic",
    "description": "Quartic well with a uniform magnetic field B = 0.3.",
    "params": {"B": {"default": 0.3, "doc": "field strength"}},
    "system": {"type": "newtonian", "dim": 2,
               "fields": {"V": "0.5*(q1^2 + q2^2) + 0.1*(q1^2 + q2^2)^2",
                          "A1": "-0.5*{B}*q2", "A2": "0.5*{B}*q1"}},
    "selector": {"m": 1, "epsilon": 1, "c": 1},
    "constants": {"E": 1, "calE": 0.6},
    "initial": {"q": [0.8, 0], "v": [0, 0.6], "t0": 0, "t1": 6, "normalize_energy": True},
    "grid": {"q": [[-0.7, -0.7], [0.7, 0.7]], "v": [[-1, -1], [1, 1]], "vc": [[-0.3, -0.3], [0.3, 0.3]]},
}

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="varidyn-"))
out.mkdir(parents=True, exist_ok=True)
path = out / "anharmonic-magnetic.json"
path.write_text(json.dumps(scenario, indent=2))
code = main(["diagram", str(path), "--out", str(out / "diagram"), "--points", "2000"])
print(f"exit code {code}; report in {out / 'diagram' / 'diagram-report.json'}")
