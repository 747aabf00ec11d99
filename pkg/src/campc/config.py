"""Scenario JSON loading, validation, and key=value overrides.

A scenario file is a single JSON object:

    {
      "name": "double_integrator",
      "plant":   {"A": [[...]], "B": [[...]]},
      "weights": {"Q": [[...]], "R": [[...]], "P": [[...]]},
      "horizon": 12,
      "input_bound": 1.0,                  # scalar, per-input list, or null
      "stage_ellipses":    [{"center": [...], "shape": [[...]], "tangent_count": 84}, ...],
      "terminal_ellipses": [...],
      "stage_constraints":    {"C": [[...]], "D": [[...]], "E": [...]},   # optional
      "terminal_constraints": {"C": [[...]], "E": [...]},                # optional
      "x0": [-4.1, 0.0],
      "steps": 150,
      "prune_radius": 0.0,
      "seed": 0
    }

Matrices are row-major nested lists. Overrides are dotted paths into this
structure ("steps=50", "weights.R=[[2.0]]", "stage_ellipses.0.tangent_count=10")
applied before validation.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bench import EllipseSpec, ScenarioConfig
from .errors import ConfigError

_TOP_LEVEL_KEYS = {
    "name",
    "plant",
    "weights",
    "horizon",
    "input_bound",
    "stage_ellipses",
    "terminal_ellipses",
    "stage_constraints",
    "terminal_constraints",
    "x0",
    "steps",
    "prune_radius",
    "seed",
}

_REQUIRED_KEYS = {"plant", "weights", "horizon", "x0"}


def load_scenario(path, overrides=None) -> ScenarioConfig:
    """Read a scenario file, apply overrides, and validate."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return scenario_from_dict(raw, overrides=overrides)


def apply_override(raw: dict, assignment: str):
    """Apply one "dotted.path=json_value" assignment in place."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' must look like key=value")
    key, _, text = assignment.partition("=")
    key = key.strip()
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text  # bare strings are allowed, e.g. name=foo
    node = raw
    parts = key.split(".")
    for i, part in enumerate(parts[:-1]):
        node = _descend(node, part, key)
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"override key '{key}' descends into a scalar at '{part}'")
    last = parts[-1]
    if isinstance(node, list):
        idx = _list_index(node, last, key)
        node[idx] = value
    else:
        if last not in node and len(parts) == 1 and last not in _TOP_LEVEL_KEYS:
            raise ConfigError(f"override key '{key}' is not a recognized setting")
        node[last] = value


def _descend(node, part: str, full_key: str):
    if isinstance(node, list):
        return node[_list_index(node, part, full_key)]
    if part not in node:
        raise ConfigError(f"override key '{full_key}' has no entry '{part}'")
    return node[part]


def _list_index(node: list, part: str, full_key: str) -> int:
    try:
        idx = int(part)
    except ValueError:
        raise ConfigError(f"override key '{full_key}' needs a list index, got '{part}'")
    if not (0 <= idx < len(node)):
        raise ConfigError(f"override key '{full_key}' index {idx} out of range")
    return idx


def scenario_from_dict(raw: dict, overrides=None) -> ScenarioConfig:
    raw = json.loads(json.dumps(raw))  # deep copy, also rejects non-JSON types
    for assignment in overrides or []:
        apply_override(raw, assignment)

    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = _REQUIRED_KEYS - set(raw)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")

    plant = raw["plant"]
    weights = raw["weights"]
    for section, keys in (("plant", ("A", "B")), ("weights", ("Q", "R", "P"))):
        block = raw[section]
        if not isinstance(block, dict) or set(block) != set(keys):
            raise ConfigError(f"'{section}' must be an object with keys {list(keys)}")

    def matrix(value, name):
        try:
            m = np.asarray(value, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"'{name}' is not a numeric matrix") from exc
        if m.ndim != 2:
            raise ConfigError(f"'{name}' must be a 2-D nested list")
        return m

    def ellipses(key):
        specs = []
        for i, item in enumerate(raw.get(key, [])):
            extra = set(item) - {"center", "shape", "tangent_count"}
            if extra:
                raise ConfigError(f"'{key}[{i}]' has unknown keys {sorted(extra)}")
            try:
                specs.append(
                    EllipseSpec(
                        center=np.asarray(item["center"], dtype=float),
                        shape=matrix(item["shape"], f"{key}[{i}].shape"),
                        tangent_count=int(item.get("tangent_count", 16)),
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"'{key}[{i}]' is missing {exc}") from exc
        return tuple(specs)

    input_bound = raw.get("input_bound")
    if input_bound is not None:
        input_bound = np.asarray(input_bound, dtype=float)
        if input_bound.ndim == 0:
            input_bound = input_bound.reshape(1)
        if input_bound.min() <= 0:
            raise ConfigError("'input_bound' entries must be positive")

    extra_stage = None
    if "stage_constraints" in raw:
        blk = raw["stage_constraints"]
        if set(blk) != {"C", "D", "E"}:
            raise ConfigError("'stage_constraints' must have keys C, D, E")
        extra_stage = (
            matrix(blk["C"], "stage_constraints.C"),
            matrix(blk["D"], "stage_constraints.D"),
            np.asarray(blk["E"], dtype=float),
        )
    extra_terminal = None
    if "terminal_constraints" in raw:
        blk = raw["terminal_constraints"]
        if set(blk) != {"C", "E"}:
            raise ConfigError("'terminal_constraints' must have keys C, E")
        extra_terminal = (
            matrix(blk["C"], "terminal_constraints.C"),
            np.asarray(blk["E"], dtype=float),
        )

    try:
        steps = int(raw.get("steps", 50))
        horizon = int(raw["horizon"])
        seed = int(raw.get("seed", 0))
        prune_radius = float(raw.get("prune_radius", 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scalar config entry has the wrong type: {exc}") from exc
    if steps < 1:
        raise ConfigError("'steps' must be at least 1")

    return ScenarioConfig(
        name=str(raw.get("name", "scenario")),
        A=matrix(plant["A"], "plant.A"),
        B=matrix(plant["B"], "plant.B"),
        Q=matrix(weights["Q"], "weights.Q"),
        R=matrix(weights["R"], "weights.R"),
        P=matrix(weights["P"], "weights.P"),
        horizon=horizon,
        input_bound=input_bound,
        stage_ellipses=ellipses("stage_ellipses"),
        terminal_ellipses=ellipses("terminal_ellipses"),
        x0=np.asarray(raw["x0"], dtype=float),
        steps=steps,
        prune_radius=prune_radius,
        seed=seed,
        extra_stage=extra_stage,
        extra_terminal=extra_terminal,
    )
