"""INI configuration: sections mirror the pipeline stages.

Every tank constant, the quantizer budgets and schedule, the value-grid
resolution and the campaign sizes can be overridden; CLI flags take
precedence over the file, which takes precedence over the defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .tank import TankParams


@dataclass
class QuantizerSettings:
    n_points: int = 1000
    calib_sims: int = 1_000_000
    train_sims: int = 1_000_000
    freeze_sims: int = 1_000_000
    gamma0: float = 0.5
    decay: float = 1e-3


@dataclass
class ValueSettings:
    n_nodes: int = 50


@dataclass
class EvaluateSettings:
    n_runs: int = 100_000
    census_runs: int = 1_000_000


@dataclass
class Settings:
    tank: TankParams
    quantizer: QuantizerSettings
    value: ValueSettings
    evaluate: EvaluateSettings


_SECTIONS = {
    "tank": TankParams,
    "quantizer": QuantizerSettings,
    "value": ValueSettings,
    "evaluate": EvaluateSettings,
}


def _coerce(field: dataclasses.Field, raw: str):
    try:
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {field.name}: {raw!r}") from exc
    return raw


def load_settings(path: str | Path | None) -> Settings:
    """Parse an INI file into Settings; None loads pure defaults."""
    values: dict[str, dict] = {name: {} for name in _SECTIONS}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str  # keys are case-sensitive (G vs g)
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            cls = _SECTIONS[section]
            fields = {f.name: f for f in dataclasses.fields(cls)}
            for key, raw in parser.items(section):
                if key not in fields:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}]")
                values[section][key] = _coerce(fields[key], raw)
    try:
        return Settings(tank=TankParams(**values["tank"]),
                        quantizer=QuantizerSettings(**values["quantizer"]),
                        value=ValueSettings(**values["value"]),
                        evaluate=EvaluateSettings(**values["evaluate"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def write_default_config(path: str | Path):
    """Emit a fully commented config with every default value."""
    lines = []
    for name, cls in _SECTIONS.items():
        lines.append(f"[{name}]")
        for f in dataclasses.fields(cls):
            lines.append(f"{f.name} = {f.default}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
