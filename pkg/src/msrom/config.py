"""INI run configuration with a strict schema.

Sections mirror the RunConfig groups::

    [mesh]
    nx = 40
    NX = 8
    [field]
    mean = synthetic
    sigma2 = 1.0

Keys are case-sensitive (nx and NX differ).  Unknown sections or keys, type
mismatches and invariant violations raise ConfigError naming ``section.key``.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path
from typing import Iterable

from .errors import ConfigError
from .pipeline import RunConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _sections() -> dict[str, type]:
    return {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


def _coerce(path: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {raw!r}") from None
    return text


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep nx / NX distinct
    return cp


def parse_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    """Read ``path`` (optional) and apply ``section.key=value`` overrides on top."""
    values: dict[str, dict[str, str]] = {}
    if path is not None:
        cp = _parser()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for sec in cp.sections():
            values.setdefault(sec, {}).update(cp[sec])
    for item in overrides:
        key, sep, val = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        values.setdefault(sec, {})[name] = val
    return build_config(values)


def build_config(values: dict[str, dict[str, str]]) -> RunConfig:
    groups = {}
    sections = _sections()
    for sec, entries in values.items():
        if sec not in sections:
            raise ConfigError(f"{sec}: unknown section (expected one of {', '.join(sections)})")
        template = sections[sec]()
        known = {f.name for f in dataclasses.fields(template)}
        kwargs = {}
        for key, raw in entries.items():
            if key not in known:
                raise ConfigError(f"{sec}.{key}: unknown key")
            kwargs[key] = _coerce(f"{sec}.{key}", raw, getattr(template, key))
        groups[sec] = dataclasses.replace(template, **kwargs)
    try:
        return RunConfig(**groups)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def validate_mesh(cfg: RunConfig) -> None:
    """Raise ConfigError for mesh dimension problems before any work starts."""
    try:
        cfg.build_mesh()
    except ConfigError as exc:
        raise ConfigError(f"mesh: {exc}") from exc


def dump_config(cfg: RunConfig) -> str:
    cp = _parser()
    for sec, group in cfg.to_dict().items():
        cp[sec] = {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in group.items()}
    from io import StringIO
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()
