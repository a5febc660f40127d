"""UTF-8 ``key = value`` config files.

Blank lines and ``#`` comments are ignored.  Every key must be known to the
caller's schema; typos are hard errors.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ConfigError


def parse_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_config(path):
    path = Path(path)
    return parse_text(path.read_text(encoding="utf-8"), source=str(path))


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _to_bool(text):
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_range(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo, hi', got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if hi < lo:
        raise ValueError(f"range upper bound below lower bound: {text!r}")
    return (lo, hi)


CONVERTERS = {int: int, float: float, str: str, bool: _to_bool, "range": _to_range}


def coerce(values, schema, source="<config>"):
    """Convert raw strings using ``schema`` (key -> type); unknown keys raise."""
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
    out = {}
    for key, raw in values.items():
        try:
            out[key] = CONVERTERS[schema[key]](raw)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc
    return out
