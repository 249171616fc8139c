"""
Run configuration: ``key = value`` config files, environment and model presets.
"""

import logging
import os
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

import click

from pahs.errors import ConfigError, FrameIOError
from pahs.model.config import ModelConfig, preset

logger = logging.getLogger(__name__)

DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_PRESET = "desk"
FULL_WINDOW = "full"


def log_level() -> str:
    return os.environ.get("PAHS_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use - or _ interchangeably"""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key.replace("-", "_")] = value
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Error reading config file {path}: {str(e)}")
        raise FrameIOError(path, str(e)) from e
    return parse_config_text(text, str(path))


def default_map_for(
    group: click.Group, values: Dict[str, str]
) -> Dict[str, Dict[str, object]]:
    """Spread flat file values over the subcommands that declare them.

    Keys no subcommand accepts raise ConfigError. Comma-separated values feed
    options that take several values.
    """
    default_map: Dict[str, Dict[str, object]] = {}
    used = set()
    for name, command in group.commands.items():
        entries: Dict[str, object] = {}
        for param in command.params:
            if param.name in values:
                value = values[param.name]
                if getattr(param, "multiple", False):
                    items = [v.strip() for v in value.split(",")]
                    entries[param.name] = [v for v in items if v]
                else:
                    entries[param.name] = value
                used.add(param.name)
        if entries:
            default_map[name] = entries
    unknown = sorted(set(values) - used)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return default_map


def parse_window(value: Union[str, int, None]) -> Union[int, str, None]:
    """An integer window, ``full`` for an unbounded reverse sweep, or None"""
    if value is None:
        return None
    if isinstance(value, int):
        if value < 0:
            raise ConfigError(f"window must be >= 0, got {value}")
        return value
    if str(value).strip().lower() == FULL_WINDOW:
        return FULL_WINDOW
    try:
        return parse_window(int(value))
    except ValueError:
        raise ConfigError(
            f"window must be an integer or '{FULL_WINDOW}', got {value!r}"
        ) from None


def build_model_config(
    base: Optional[Union[str, ModelConfig]] = None,
    window: Union[int, str, None] = None,
    **overrides,
) -> ModelConfig:
    """Preset (or an existing config) with the non-None overrides applied, validated"""
    if isinstance(base, ModelConfig):
        config = base
    else:
        config = preset(base or DEFAULT_PRESET)
    changes = {k: v for k, v in overrides.items() if v is not None}
    window = parse_window(window)
    if window == FULL_WINDOW:
        changes["future_window"] = None
    elif window is not None:
        changes["future_window"] = window
    return config.with_overrides(**changes)


def parse_milestones(value: Optional[str]) -> Iterable[int]:
    if not value:
        return ()
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(
            f"milestones must be comma-separated integers, got {value!r}"
        ) from None
