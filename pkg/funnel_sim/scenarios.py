# funnel_sim/scenarios.py
"""Bundled scenarios. JSON scenario documents use the same schema and are loaded by path instead of by name."""
from typing import Any, Dict, List

from funnel_sim.errors import ConfigError
from funnel_sim.models import ScenarioConfig

# φ(t) = 10 − 9.5·e^{−t/2}: 1/φ(0) = 2, limit radius 0.1
BEAM_FUNNEL = {"type": "exp_approach", "a": 10.0, "b": 9.5, "c": 0.5}
BEAM_REFERENCE = {"type": "cos", "omega": 1.0}

BUNDLED: Dict[str, Dict[str, Any]] = {
    "beam_distributed": {
        "name": "beam_distributed",
        "description": "clamped-free beam, force distributed over [1/3, 2/3], co-located velocity output",
        "system": {"beam": {"n_elements": 80, "actuation": {"type": "distributed", "a": 1.0 / 3.0, "b": 2.0 / 3.0}}},
        "funnel": BEAM_FUNNEL,
        "y_ref": BEAM_REFERENCE,
        "horizon": 30.0,
        "rtol": 1e-7,
        "sample_interval": 0.01,
    },
    "beam_point": {
        "name": "beam_point",
        "description": "clamped-free beam, point force at 1/2, initial input mismatch compensated",
        "system": {"beam": {"n_elements": 80, "actuation": {"type": "point", "xi0": 0.5}}},
        "funnel": BEAM_FUNNEL,
        "y_ref": BEAM_REFERENCE,
        "compensate_initial_mismatch": True,
        "horizon": 30.0,
        "rtol": 1e-7,
        "sample_interval": 0.01,
    },
    "scalar_unbounded": {
        "name": "scalar_unbounded",
        "description": "x' = -x + u, y = -x + u: passive, tracking succeeds while x and u grow like t/2",
        "system": {"matrices": {"H": [[1.0]], "A": [[-1.0]], "B": [[1.0]], "C": [[-1.0]], "D": [[1.0]]}},
        "funnel": {"type": "constant", "phi0": 2.0},
        "y_ref": {"type": "constant", "value": 1.0},
        "horizon": 50.0,
        "rtol": 1e-8,
        "atol": 1e-10,
    },
    "scalar_bounded": {
        "name": "scalar_bounded",
        "description": "x' = -x + u, y = x: strictly passive, state and input stay bounded",
        "system": {"matrices": {"H": [[1.0]], "A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]}},
        "funnel": BEAM_FUNNEL,
        "y_ref": BEAM_REFERENCE,
        "horizon": 200.0,
        "rtol": 1e-8,
        "atol": 1e-10,
        "alpha": 1.0,
    },
}


def list_scenarios() -> List[str]:
    return list(BUNDLED)


def get_scenario(name: str) -> ScenarioConfig:
    try:
        record = BUNDLED[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; bundled: {', '.join(BUNDLED)}", field_path="name") from None
    return ScenarioConfig.model_validate(record)
