"""Unit-suffixed INI configuration for scans.

Every dimensional value carries an explicit unit (``-5 MHz``, ``1.2 G``,
``250 mW``); bare numbers are accepted only for dimensionless keys.
Frequencies given in Hz-type units are converted to angular frequency.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import fields, replace

from scipy.constants import e as E_CHARGE, physical_constants

from .experiments import ScanConfig

AMU = physical_constants["atomic mass constant"][0]
TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Malformed, unknown or out-of-range configuration entry."""


# unit tables: suffix -> factor to SI; the first entry is the canonical one
UNITS = {
    "frequency": {"rad/s": 1.0, "Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6, "GHz": TWO_PI * 1e9},
    "power": {"W": 1.0, "mW": 1e-3, "uW": 1e-6},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "field": {"T": 1.0, "mT": 1e-3, "G": 1e-4, "mG": 1e-7},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6},
    "energy": {"J": 1.0, "eV": E_CHARGE, "meV": 1e-3 * E_CHARGE},
    "rate": {"/s": 1.0, "1/s": 1.0},
    "mass": {"kg": 1.0, "amu": AMU},
}

# section -> key -> kind; kinds outside UNITS are handled explicitly
SCHEMA = {
    "lasers": {
        "geometry": "str", "power_729": "power", "waist_729": "length", "power_854": "power",
        "waist_854": "length", "detuning_854": "frequency", "power_866": "power",
        "waist_866": "length", "detuning_866": "frequency", "bfield": "field",
        "bfield_direction": "vector", "bfield_list": "field_list",
    },
    "trap": {"omega_z": "frequency", "omega_r": "frequency", "mass": "mass"},
    "ions": {
        "n_ions": "int", "dark_index": "opt_int", "dark_mass": "opt_mass", "precool": "str",
        "precool_temperature": "temperature", "precool_time": "time",
    },
    "scan": {
        "detuning_start": "frequency", "detuning_stop": "frequency", "detuning_points": "int",
        "window": "time", "trials": "int", "efficiency": "float", "seed": "int",
        "profile_detuning": "opt_frequency",
    },
    "noise": {"recoil": "bool", "collision_rate": "rate", "collision_energy": "energy", "heating_rate": "rate"},
    "atom": {"p12_d32_branching": "float", "g_s": "float"},
}

_FIELD_NAMES = {f.name for f in fields(ScanConfig)}
assert all(k in _FIELD_NAMES for sec in SCHEMA.values() for k in sec)


def _split_unit(text: str, kind: str, key: str) -> tuple[str, float]:
    table = UNITS[kind]
    parts = text.strip().rsplit(None, 1)
    if len(parts) != 2 or parts[1] not in table:
        raise ConfigError(f"{key}: expected a number with one of the units {', '.join(table)}; got {text!r}")
    return parts[0], table[parts[1]]


def _number(text: str, key: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise ConfigError(f"{key}: {text!r} is not a number") from None
    if not math.isfinite(x):
        raise ConfigError(f"{key}: value must be finite")
    return x


def parse_value(text: str, kind: str, key: str = "value"):
    """Convert one entry to SI according to its kind."""
    text = text.strip()
    if kind.startswith("opt_"):
        if text.lower() == "none":
            return None
        kind = kind[4:]
    if kind == "str":
        return text
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: {text!r} is not an integer") from None
    if kind == "float":
        return _number(text, key)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "on", "yes", "1"):
            return True
        if low in ("false", "off", "no", "0"):
            return False
        raise ConfigError(f"{key}: {text!r} is not a boolean")
    if kind == "vector":
        vals = [_number(t, key) for t in text.split(",")]
        if len(vals) != 3:
            raise ConfigError(f"{key}: expected three comma-separated numbers")
        return tuple(vals)
    if kind == "field_list":
        body, factor = _split_unit(text, "field", key)
        return tuple(_number(t, key) * factor for t in body.split(",") if t.strip())
    number, factor = _split_unit(text, kind, key)
    return _number(number, key) * factor


def format_value(value, kind: str) -> str:
    """Inverse of ``parse_value`` using canonical SI units (exact via repr)."""
    if kind.startswith("opt_"):
        if value is None:
            return "none"
        kind = kind[4:]
    if kind == "str":
        return str(value)
    if kind == "int":
        return str(int(value))
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "vector":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "field_list":
        return ", ".join(repr(float(v)) for v in value) + " T"
    unit = next(iter(UNITS[kind]))
    return f"{float(value)!r} {unit}"


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    p.optionxform = str
    return p


def _read(text: str) -> configparser.ConfigParser:
    p = _parser()
    try:
        p.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    return p


def _locate(key: str) -> tuple[str, str]:
    if "." in key:
        sec, name = key.split(".", 1)
        if sec not in SCHEMA or name not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {key!r}")
        return sec, name
    hits = [sec for sec, keys in SCHEMA.items() if key in keys]
    if not hits:
        raise ConfigError(f"unknown key {key!r}")
    return hits[0], key


def apply_overrides(text: str, overrides=()) -> str:
    """Apply ``section.key=value`` (or unique ``key=value``) overrides."""
    p = _read(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        sec, name = _locate(key)
        if not p.has_section(sec):
            p.add_section(sec)
        p.set(sec, name, value)
    out = []
    for sec in p.sections():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {v}" for k, v in p.items(sec))
        out.append("")
    return "\n".join(out)


def parse_config(text: str, overrides=()) -> ScanConfig:
    """Resolve INI text (plus overrides) on top of the preset defaults."""
    if overrides:
        text = apply_overrides(text, overrides)
    p = _read(text)
    values = {}
    for sec in p.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in p.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            values[key] = parse_value(raw, SCHEMA[sec][key], f"{sec}.{key}")
    try:
        return replace(ScanConfig(), **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def serialize_config(cfg: ScanConfig) -> str:
    """Full configuration in canonical units; ``parse_config`` inverts it."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, kind in keys.items():
            out.append(f"{key} = {format_value(getattr(cfg, key), kind)}")
        out.append("")
    return "\n".join(out)
