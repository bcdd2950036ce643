"""Runtime parameters and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches, or invalid values."""


@dataclass
class Config:
    """All tunable parameters, with their stock defaults.

    Every field can be overridden from a config file; unspecified keys keep
    the defaults below.
    """

    # sensor gating
    min_range: float = 0.5
    max_range: float = 100.0

    # feature extraction
    n_neighbor: int = 5
    n_sectors: int = 6
    n_planar: int = 50
    n_point: int = 3
    delta_planar: float = 1.0
    delta_radius: float = 1.0

    # matching and map maintenance
    delta_match: float = 0.8
    delta_map: float = 0.1

    # window management
    n_recent: int = 10
    n_key: int = 50
    n_marg: int = 10
    delta_key: float = 0.1

    # optimization
    n_icp: int = 30
    delta_icp: float = 1.0e-4

    # ablation toggles
    smoothing: bool = True
    point_features: bool = True

    def validate(self) -> "Config":
        """Check invariants; raises ConfigError naming the bad parameter."""
        def positive(name):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

        for name in (
            "min_range",
            "delta_planar",
            "delta_radius",
            "delta_match",
            "delta_map",
            "delta_icp",
        ):
            positive(name)
        for name in ("n_neighbor", "n_sectors", "n_recent", "n_key", "n_marg", "n_icp"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("n_planar", "n_point"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.delta_key < 0:
            raise ConfigError(f"delta_key must be >= 0, got {self.delta_key}")
        if self.max_range <= self.min_range:
            raise ConfigError(
                f"max_range must exceed min_range, got {self.max_range} <= {self.min_range}"
            )
        return self


_TRUE = {"1", "true", "on", "yes"}
_FALSE = {"0", "false", "off", "no"}


def _coerce(name: str, kind: type, raw: str):
    text = raw.strip()
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name} expects a boolean, got {text!r}")
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name} expects an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name} expects a number, got {text!r}") from None
    raise ConfigError(f"{name} has unsupported type {kind!r}")


def parse_config(text: str, source: str = "<config>") -> Config:
    """Parse flat ``key = value`` lines (``#`` comments) into a Config.

    Unknown keys are errors; missing keys fall back to defaults and the
    fallback is logged.
    """
    fields = {f.name: f.type for f in dataclasses.fields(Config)}
    # dataclasses may store annotations as strings under future-imports
    kinds = {"int": int, "float": float, "bool": bool, int: int, float: float, bool: bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{source}:{lineno}: unknown parameter {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate parameter {key!r}")
        values[key] = _coerce(key, kinds[fields[key]], raw)
    missing = sorted(set(fields) - set(values))
    if missing:
        log.info("%s: using defaults for %s", source, ", ".join(missing))
    return Config(**values).validate()


def load_config(path) -> Config:
    """Read a config file; see parse_config for format and errors."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
