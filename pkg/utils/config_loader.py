"""
Run configuration files: plain `key = value` lines, `#` comments.

Effective config = RunConfig defaults < config file < command-line flags.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import ValidationError

from schema.run_schema import RunConfig
from utils.errors import ConfigError, DatasetIOError

logger = logging.getLogger(__name__)

RUN_CONFIG_NAME = "run_config.txt"
# Echoed into run_config.txt for the record; derived or fixed, so never read back
ECHO_ONLY_KEYS = {"epochs", "dropout_rate"}
_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _coerce_bool(key: str, value: str) -> bool:
    word = value.strip().lower()
    if word not in _BOOL_WORDS:
        raise ConfigError(f"'{key}' must be true or false, got '{value}'.")
    return _BOOL_WORDS[word]


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parses a config file into RunConfig field values (unknown keys rejected)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(f"Config file not found: {path}")
    raw = dotenv_values(path, interpolate=False)

    known = set(RunConfig.model_fields) | {"lambda"}
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        key = key.strip().lower()
        if key in ECHO_ONLY_KEYS:
            logger.debug(f"Ignoring echo-only config key '{key}'.")
            continue
        if key not in known:
            raise ConfigError(f"Unknown config key '{key}' in {path}.")
        if value is None or value.strip() == "":
            continue
        value = value.strip()
        if key == "use_inception":
            values[key] = _coerce_bool(key, value)
        else:
            values["lam" if key == "lambda" else key] = value
    return values


def build_run_config(config_path: Optional[Union[str, Path]] = None,
                     overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Merges defaults, an optional config file and flag overrides (None values
    mean "flag not given") into a validated RunConfig.
    """
    merged: Dict[str, Any] = {}
    if config_path:
        merged.update(read_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged["lam" if key == "lambda" else key] = value
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"Invalid value for '{where}': {first['msg']}")


def write_run_config(cfg: RunConfig, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / RUN_CONFIG_NAME
    lines = [f"{key} = {value}" for key, value in cfg.as_text_items()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}")
    return path
