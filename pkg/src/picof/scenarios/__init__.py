"""Scenario files for the built-in case studies.

Scenarios are JSON documents. ``load_scenario`` accepts a built-in name
(``toy``, ``fuelcell``) or a path, validates it and applies overrides.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..plants.fuelcell import DH_RXN, FcStackParams, default_stacks

BUILTIN = ("toy", "fuelcell")


class ScenarioError(ValueError):
    """Invalid scenario content or override."""


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    data: dict
    sha256: str
    source: str

    def __getitem__(self, key):
        return self.data[key]

    @property
    def steps(self) -> int:
        if self.kind == "toy":
            return int(self.data["trials"])
        sched = self.data["schedule"]
        return int(round(sched["duration"] / sched["interval"]))


_TOY_SCHEMA = {
    "init_x": list, "trials": int, "z": (int, float), "beta": (int, float),
    "limit": (int, float), "correction": str, "weights": dict, "grid": dict,
    "gp": dict, "solver": dict,
}
_FC_SCHEMA = {
    "stacks": list, "dh": (int, float), "E_t": (int, float), "T_lim": (int, float),
    "alpha1": (int, float), "alpha2": (int, float), "h2_scale": (int, float),
    "z": (int, float), "beta": (int, float), "schedule": dict, "pretrain": dict,
    "correction": str, "weights": dict, "gp": dict, "solver": dict,
}
_WEIGHT_MODES = ("constant", "sigma_scaled", "sigma_inverse")


def _check(data: dict, schema: dict, kind: str):
    for key, typ in schema.items():
        if key not in data:
            raise ScenarioError(f"{kind} scenario is missing {key!r}")
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, typ):
            raise ScenarioError(f"{kind} scenario field {key!r} has wrong type")
    if data["correction"] not in ("additive", "multiplicative"):
        raise ScenarioError("correction must be 'additive' or 'multiplicative'")
    w = data["weights"]
    if w.get("mode") not in _WEIGHT_MODES:
        raise ScenarioError(f"weights.mode must be one of {_WEIGHT_MODES}")
    k = w.get("k")
    if not isinstance(k, list) or not k or any(not (isinstance(v, (int, float)) and v > 0) for v in k):
        raise ScenarioError("weights.k must be a non-empty list of positive numbers")
    if data["beta"] < 0:
        raise ScenarioError("beta must be non-negative")
    solver = data["solver"]
    for key in ("candidate_count", "local_refine", "restarts"):
        if key in solver and (not isinstance(solver[key], int) or solver[key] < 1):
            raise ScenarioError(f"solver.{key} must be a positive integer")


def validate(data: dict) -> str:
    kind = data.get("kind")
    if kind == "toy":
        _check(data, _TOY_SCHEMA, "toy")
        if data["trials"] < 1:
            raise ScenarioError("trials must be at least 1")
        if len(data["init_x"]) < 1 or any(not 0 <= v <= 2 for v in data["init_x"]):
            raise ScenarioError("init_x must be non-empty and inside [0, 2]")
        if len(data["weights"]["k"]) not in (1, 2):
            raise ScenarioError("toy weights.k needs 1 or 2 entries")
    elif kind == "fuelcell":
        _check(data, _FC_SCHEMA, "fuelcell")
        for s in data["stacks"]:
            try:
                FcStackParams(**s)
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"bad stack parameters: {exc}") from None
        sched = data["schedule"]
        if sched.get("interval", 0) <= 0 or sched.get("duration", 0) < sched.get("interval", 0):
            raise ScenarioError("schedule needs positive interval and duration >= interval")
        steps = sched["duration"] / sched["interval"]
        if abs(steps - round(steps)) > 1e-9:
            raise ScenarioError("duration must be a multiple of the interval")
        if len(data["weights"]["k"]) not in (1, 2 * len(data["stacks"])):
            raise ScenarioError("fuelcell weights.k needs 1 or 2*stacks entries")
    else:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    return kind


def apply_overrides(data: dict, z=None, beta=None, trials=None, weight_mode=None, weights=None) -> dict:
    out = copy.deepcopy(data)
    if z is not None:
        out["z"] = float(z)
    if beta is not None:
        out["beta"] = float(beta)
    if trials is not None:
        if out.get("kind") == "toy":
            out["trials"] = int(trials)
        else:
            out["schedule"]["duration"] = int(trials) * out["schedule"]["interval"]
    if weight_mode is not None:
        out["weights"]["mode"] = weight_mode
    if weights is not None:
        out["weights"]["k"] = [float(v) for v in weights]
    return out


def load_scenario(name_or_path: str, **overrides) -> Scenario:
    if name_or_path in BUILTIN:
        raw = resources.files(__package__).joinpath(f"{name_or_path}.json").read_bytes()
        source = f"builtin:{name_or_path}"
    else:
        path = Path(name_or_path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {name_or_path!r}: {exc.strerror}") from None
        source = str(path)
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    validate(data)
    data = apply_overrides(data, **overrides)
    kind = validate(data)
    return Scenario(data.get("name", kind), kind, data, hashlib.sha256(raw).hexdigest(), source)


def equal_split_thermal(stacks, total_power: float) -> float:
    share = total_power / len(stacks)
    return float(sum(s.thermal_load(share) for s in stacks))


def generate_fc_scenario(limit_fraction: float = 0.95, total_power: float = 360.0) -> dict:
    """Default fuel-cell scenario with the thermal limit set below the
    equal-split allocation so the constraint binds for naive sharing."""
    stacks = default_stacks()
    t_lim = limit_fraction * equal_split_thermal(stacks, total_power)
    n = len(stacks)
    return {
        "kind": "fuelcell",
        "name": "fuelcell",
        "version": 1,
        "stacks": [s.as_dict() for s in stacks],
        "dh": DH_RXN,
        "E_t": total_power,
        "T_lim": round(t_lim, 6),
        "alpha1": 1.0,
        "h2_scale": 1e3,
        "alpha2": 10.0,
        "z": 10000.0,
        "beta": 1.0,
        "correction": "additive",
        "weights": {"mode": "sigma_scaled", "k": [1.0] * (2 * n)},
        "schedule": {"interval": 250, "duration": 10000, "dt": 1.0},
        "pretrain": {"count": 8, "low": 10.0, "high": 60.0, "settle": 600},
        "gp": {"noise_variance": 1e-6, "refit_every": 5, "restarts": 3,
               "lengthscale_bounds": [0.05, 5.0], "signal_variance_bounds": [0.01, 100.0]},
        "solver": {"candidate_count": 512, "local_refine": 200, "restarts": 4,
                   "infeasibility_penalty": 1e6},
    }


def write_default_scenarios(directory: str | Path):
    d = Path(directory)
    (d / "fuelcell.json").write_text(json.dumps(generate_fc_scenario(), indent=2) + "\n")
