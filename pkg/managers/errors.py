"""
Domain exceptions of the toolchain, and the type check for config mappings.
Every domain error derives from ToolchainError (a ValueError), so callers that
only care about "bad input" can keep catching ValueError.
"""

import numbers
from dataclasses import fields
from typing import Any, Mapping


class ToolchainError(ValueError):
    """Base class of every domain error (CLI exit code 1)."""


class ConfigError(ToolchainError):
    """Invalid hyperparameter or configuration value."""


class DomainValueError(ToolchainError):
    """Argument outside the mathematical domain of an operation."""


# --- Audio I/O ---

class WavFormatError(ToolchainError):
    """Unsupported or malformed WAV header field."""

    def __init__(self, field: str, detail: str):
        self.field = field
        super().__init__(f"unsupported {field}: {detail}")


class WavIOError(ToolchainError, OSError):
    """Truncated file or unwritable path."""


class EmptySegmentError(ToolchainError):
    """Buffer shorter than a single segment."""


class SignalLengthError(ToolchainError):
    """Signal too short for the requested analysis frame."""


# --- Filters / Training ---

class FilterDesignError(ToolchainError):
    """Least-squares design could not be solved (degenerate grid)."""


class DegenerateTargetError(ToolchainError):
    """Target window carries no energy after pre-emphasis (silent or DC-only)."""


class AlignmentError(ToolchainError):
    """Input and target data do not line up."""


# --- Checkpoints ---

class CheckpointError(ToolchainError):
    """Base class of checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


# --- Config mappings ---

def _coerce(kind: str, name: str, value: Any, default: Any) -> Any:
    bad = ConfigError(f"{kind} config field {name!r} expects {type(default).__name__}, got {value!r}")
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise bad
    if isinstance(value, bool):
        raise bad
    if isinstance(default, int):
        if isinstance(value, numbers.Integral):
            return int(value)
        if isinstance(value, numbers.Real) and float(value).is_integer():
            return int(value)
        raise bad
    if isinstance(default, float):
        if isinstance(value, numbers.Real):
            return float(value)
        raise bad
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise bad
    if isinstance(default, tuple):
        items = value if isinstance(value, (list, tuple)) else None
        if items is not None and all(isinstance(v, numbers.Real) and not isinstance(v, bool) for v in items):
            return tuple(float(v) for v in items)
        raise bad
    return value


def coerce_config_values(cls, values: Mapping, kind: str) -> dict:
    """
    Check a mapping (e.g. a JSON config file) against the field defaults of a
    config dataclass. Unknown keys and values of the wrong type raise
    ConfigError; integral floats are accepted for int fields.
    """
    defaults = {f.name: f.default for f in fields(cls)}
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown {kind} config keys: {', '.join(unknown)}")
    return {name: _coerce(kind, name, value, defaults[name]) for name, value in values.items()}
