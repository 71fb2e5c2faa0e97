"""Run configuration: JSON files validated against a published schema.

Values are resolved in the order preset < file < command-line flags, and
every default is written out explicitly so the resolved config alone
reproduces a run.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .hilbert import PhysicalParams
from .semiclassical.model import physical_drive


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("bhdimer").joinpath("schema/run_config.schema.json").read_text())


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("bhdimer").joinpath("presets").iterdir()
                  if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("bhdimer").joinpath(f"presets/{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def _fill_defaults(schema: dict, inst: dict) -> dict:
    for key, sub in schema.get("properties", {}).items():
        if key not in inst and "default" in sub:
            inst[key] = copy.deepcopy(sub["default"])
        if sub.get("type") == "object" and isinstance(inst.get(key), dict):
            _fill_defaults(sub, inst[key])
    return inst


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(data: dict) -> None:
    schema = load_schema()
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))


@dataclass
class RunConfig:
    data: dict
    source: list[str] = field(default_factory=list)
    overrides: dict = field(default_factory=dict)

    @property
    def command(self) -> str:
        return self.data["command"]

    def section(self, name: str) -> dict:
        return self.data[name]

    def mu_values(self) -> list[float]:
        mu = self.data["params"]["mu"]
        return [float(m) for m in (mu if isinstance(mu, list) else [mu])]

    def f_values(self) -> list[float | None]:
        f = self.data["params"]["f"]
        if f is None:
            return [None]
        return [float(x) for x in (f if isinstance(f, list) else [f])]

    def physical_params(self, mu: float, f: float | None) -> PhysicalParams:
        """Parameters at scale ``mu``: ``U/mu`` and either the given ``F`` or ``sqrt(mu)`` times the
        drive that yields dimensionless ``f``."""
        p = self.data["params"]
        U = p["U"] / mu
        if p["F"] is not None:
            F = p["F"]
        else:
            F = math.sqrt(mu) * physical_drive(f or 0.0, p["U"], p["gamma"])
        return PhysicalParams(J=p["J"], Delta=p["Delta"], U=U, gamma=p["gamma"], F=F, mu=mu)

    def to_json(self) -> dict:
        return copy.deepcopy(self.data)


def parse_config(path=None, *, preset: str | None = None, overrides: dict | None = None,
                 command: str | None = None) -> RunConfig:
    """Resolve preset, file and flag values into a validated config with all defaults filled."""
    data: dict = {}
    source = []
    if preset:
        data = _merge(data, load_preset(preset))
        source.append(f"preset:{preset}")
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = _merge(data, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
        source.append(f"file:{p}")
    if command is not None:
        if "command" in data and data["command"] != command:
            raise ConfigError(f"config is for command {data['command']!r}, not {command!r}")
        data["command"] = command
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    data = _merge(data, overrides)
    validate(data)
    data = _fill_defaults(load_schema(), data)
    p = data["params"]
    if p["F"] is not None and p["f"] not in (None, 0.0):
        raise ConfigError("params: give either f (dimensionless) or F (physical), not both")
    if p["U"] == 0 and p["F"] is None:
        raise ConfigError("params/U: zero interaction leaves f undefined; give F directly")
    validate(data)
    return RunConfig(data, source, overrides)
