"""TOML run-configuration loader.

Every section and key is optional in the file; missing values take the
package defaults and the fully materialized configuration is echoed
into the run header, so a trace never depends on unstated parameters.
Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .predictor import PredictorConfig
from .runner import (BoundsConfig, EstimatorConfig, ObserverConfig, RunConfig,
                     SafetyConfig, SimConfig, validate)
from .truck import LeadProfile, TruckParams


def _build(cls, data: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", path)
    return cls(**data)


def _pop_section(raw: dict, name: str) -> dict:
    val = raw.pop(name, {})
    if not isinstance(val, dict):
        raise ConfigError("expected a table", name)
    return dict(val)


def load_config(path: str) -> RunConfig:
    """Read a TOML file into a validated :class:`RunConfig`."""
    with open(path, "rb") as fh:
        raw = dict(tomllib.load(fh))

    scenario_raw = _pop_section(raw, "scenario")
    lead_raw = scenario_raw.pop("lead", {})
    if "x0" in scenario_raw:
        scenario_raw["x0"] = tuple(float(v) for v in scenario_raw["x0"])
    for key in ("box_low", "box_high"):
        if key in scenario_raw:
            scenario_raw[key] = tuple(float(v) for v in scenario_raw[key])
    scenario_raw["lead"] = _build(LeadProfile, lead_raw, "scenario.lead")
    scenario = _build(TruckParams, scenario_raw, "scenario")

    sim_raw = _pop_section(raw, "sim")
    if "pre_run_input" in sim_raw:
        sim_raw["pre_run_input"] = tuple(float(v) for v in sim_raw["pre_run_input"])

    sections = {
        "estimator": _build(EstimatorConfig, _pop_section(raw, "estimator"),
                            "estimator"),
        "observer": _build(ObserverConfig, _pop_section(raw, "observer"),
                           "observer"),
        "predictor": _build(PredictorConfig, _pop_section(raw, "predictor"),
                            "predictor"),
        "bounds": _build(BoundsConfig, _pop_section(raw, "bounds"), "bounds"),
        "safety": _build(SafetyConfig, _pop_section(raw, "safety"), "safety"),
        "sim": _build(SimConfig, sim_raw, "sim"),
    }
    top = {}
    for key in ("true_delay", "mode"):
        if key in raw:
            top[key] = raw.pop(key)
    if raw:
        raise ConfigError(f"unknown top-level keys {sorted(raw)}", "<root>")
    config = RunConfig(scenario=scenario, **top, **sections)
    validate(config)
    return config
