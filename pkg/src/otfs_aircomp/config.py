"""Sweep configuration: dataclass, validation and INI-style config files.

Config file grammar
-------------------
A standard INI file (``configparser`` syntax: ``[section]`` headers,
``key = value`` lines, ``#`` or ``;`` comments). Every section and key is
optional; unknown sections or keys are rejected. Lists are comma-separated.

``[system]``  M, N, Q, P, l_max, k_max, mode (integer|fractional), rho
``[pilot]``   pilot_snr_db, candidates
``[sweep]``   snr_db, trials, schemes (robust, nonrobust), seed, symbols
              (gaussian|qpsk), data_power, common_random_numbers (true|false)
``[offsets]`` probability, which (none|delay|doppler|both)
``[power]``   ratios, tie_pilot_snr (true|false)
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .channel import FRACTIONAL, INTEGER, InfeasibleConfigError
from .estimation import DEFAULT_CANDIDATES
from .precoder import NON_ROBUST, ROBUST

__all__ = [
    "ConfigError",
    "SweepConfig",
    "DESK_DEFAULTS",
    "PAPER_SCALE",
    "parse_config",
    "config_from_mapping",
]

SCHEMES = (ROBUST, NON_ROBUST)
OFFSET_CHOICES = ("none", "delay", "doppler", "both")


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass(frozen=True)
class SweepConfig:
    M: int = 16
    N: int = 16
    Q: int = 3
    P: int = 2
    l_max: int = 2
    k_max: int = 1
    mode: str = INTEGER
    rho: float = 0.99
    pilot_snr_db: float = 30.0
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    trials: int = 500
    schemes: tuple = SCHEMES
    offset_probability: float = 0.0
    offset_which: str = "none"
    seed: int = 0
    symbols: str = "gaussian"
    data_power: float = 1.0
    candidates: tuple = DEFAULT_CANDIDATES
    power_ratios: tuple = (0.2, 0.5, 1.0, 1.5, 2.0, 4.0)
    common_random_numbers: bool = True
    tie_pilot_snr: bool = True

    def __post_init__(self):
        if self.mode not in (INTEGER, FRACTIONAL):
            raise ConfigError(f"mode must be 'integer' or 'fractional', got {self.mode!r}")
        if self.symbols not in ("gaussian", "qpsk"):
            raise ConfigError(f"symbols must be 'gaussian' or 'qpsk', got {self.symbols!r}")
        if self.offset_which not in OFFSET_CHOICES:
            raise ConfigError(f"offsets.which must be one of {OFFSET_CHOICES}, got {self.offset_which!r}")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigError(f"schemes must be a non-empty subset of {SCHEMES}, got {self.schemes!r}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if not 0.0 <= self.offset_probability <= 1.0:
            raise ConfigError("offsets.probability must lie in [0, 1]")
        if self.data_power <= 0:
            raise ConfigError("data_power must be positive")
        if any(r <= 0 for r in self.power_ratios):
            raise ConfigError("power ratios must be positive")
        if not self.snr_db:
            raise ConfigError("snr_db must list at least one value")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("M", "N", "Q", "P", "trials"):
            if getattr(self, name) < 1:
                raise InfeasibleConfigError(f"{name} must be at least 1")
        if self.l_max < 0 or self.k_max < 0:
            raise InfeasibleConfigError("l_max and k_max must be nonnegative")
        if self.P > self.l_max + 1:
            raise InfeasibleConfigError(f"P > l_max + 1 ({self.P} > {self.l_max + 1}): delay taps cannot be distinct")
        if not 2 * self.l_max < self.M:
            raise InfeasibleConfigError(f"2*l_max >= M ({2 * self.l_max} >= {self.M}): round-trip delays leave the grid")
        if self.Q * (2 * self.l_max + 1) > self.M:
            raise InfeasibleConfigError(
                f"Q*(2*l_max+1) > M ({self.Q * (2 * self.l_max + 1)} > {self.M}): pilots cannot be orthogonal"
            )
        if 2 * (2 * self.k_max) + 1 > self.N:
            raise InfeasibleConfigError(
                f"2*(2*k_max)+1 > N ({4 * self.k_max + 1} > {self.N}): round-trip Doppler guard does not fit"
            )

    @property
    def MN(self) -> int:
        return self.M * self.N

    def replace(self, **changes) -> "SweepConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in dataclasses.fields(self)}


DESK_DEFAULTS = SweepConfig()
PAPER_SCALE = dict(M=64, N=64, Q=6, P=3, l_max=4, k_max=2, pilot_snr_db=30.0)

# section -> key -> (field name, parser)
_FLOATS = lambda s: tuple(float(v) for v in s.split(",") if v.strip())  # noqa: E731
_BOOL = lambda s: {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}[s.lower()]  # noqa: E731
_WORDS = lambda s: tuple(v.strip().lower() for v in s.split(",") if v.strip())  # noqa: E731
_SCHEMA = {
    "system": {
        "m": ("M", int), "n": ("N", int), "q": ("Q", int), "p": ("P", int),
        "l_max": ("l_max", int), "k_max": ("k_max", int),
        "mode": ("mode", str.lower), "rho": ("rho", float),
    },
    "pilot": {"pilot_snr_db": ("pilot_snr_db", float), "candidates": ("candidates", _FLOATS)},
    "sweep": {
        "snr_db": ("snr_db", _FLOATS), "trials": ("trials", int), "schemes": ("schemes", _WORDS),
        "seed": ("seed", int), "symbols": ("symbols", str.lower), "data_power": ("data_power", float),
        "common_random_numbers": ("common_random_numbers", _BOOL),
    },
    "offsets": {"probability": ("offset_probability", float), "which": ("offset_which", str.lower)},
    "power": {"ratios": ("power_ratios", _FLOATS), "tie_pilot_snr": ("tie_pilot_snr", _BOOL)},
}


def config_from_mapping(sections: dict, base: SweepConfig = DESK_DEFAULTS, source: str = "<config>") -> SweepConfig:
    """Build a validated config from ``{section: {key: text}}``."""
    changes = {}
    for section, items in sections.items():
        schema = _SCHEMA.get(section.lower())
        if schema is None:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, text in items.items():
            entry = schema.get(key.lower())
            if entry is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            name, conv = entry
            try:
                changes[name] = conv(text.strip())
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {text!r}") from exc
    return dataclasses.replace(base, **changes)


def parse_config(path, base: SweepConfig = DESK_DEFAULTS) -> SweepConfig:
    """Read and validate an INI config file; an empty file yields the defaults."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case for error messages
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        if isinstance(exc, configparser.MissingSectionHeaderError):
            detail = f"line {exc.lineno}: key outside any [section]"
        elif isinstance(exc, configparser.ParsingError):
            detail = "; ".join(f"line {n}: cannot parse {text}" for n, text in exc.errors)
        elif isinstance(exc, configparser.DuplicateOptionError):
            detail = f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]"
        elif isinstance(exc, configparser.DuplicateSectionError):
            detail = f"line {exc.lineno}: duplicate section [{exc.section}]"
        else:
            detail = exc.message
        raise ConfigError(f"{path}: {detail}") from exc
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return config_from_mapping(sections, base, source=str(path))
