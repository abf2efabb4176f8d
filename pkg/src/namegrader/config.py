"""Engine configuration with layered precedence.

Sources, strongest first: explicit overrides (CLI flags), environment
variables, a JSON config file, built-in defaults. The config file path
comes from the EIPL_CONFIG environment variable unless given explicitly.

Environment variables: EIPL_API_KEY (read by the HTTP client, not stored
here), EIPL_MODEL_ID, EIPL_BASE_URL, EIPL_N_VARIANTS, EIPL_WORD_LIMIT,
EIPL_MAX_ATTEMPTS, EIPL_WORKER_LIMIT, EIPL_CACHE_PATH, EIPL_BANK_PATH,
EIPL_RETRY_BUDGET, EIPL_RUNNER_CMD, EIPL_TEMPERATURE_ONE_ATTEMPT,
EIPL_TEMPERATURE_ROBUSTNESS.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

CONFIG_PATH_ENV = "EIPL_CONFIG"
ENV_PREFIX = "EIPL_"


@dataclass(frozen=True)
class EngineConfig:
    model_id: str = "gpt-4o"
    base_url: str = "https://api.openai.com/v1"
    temperature_one_attempt: float = 0.0
    temperature_robustness: float = 0.7
    n_variants: int = 5
    word_limit: int = 10
    max_attempts: int = 3
    worker_limit: int = 4
    cache_path: str = ".namegrader/variant_cache.jsonl"
    bank_path: str | None = None  # None -> the packaged default bank
    retry_budget: int = 3
    runner_cmd: str = "fnharness"

    def __post_init__(self) -> None:
        if self.n_variants < 1:
            raise ValueError("n_variants must be >= 1")
        if self.word_limit < 1:
            raise ValueError("word_limit must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.worker_limit < 1:
            raise ValueError("worker_limit must be >= 1")
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")


_FIELD_TYPES = {f.name: f.type for f in fields(EngineConfig)}


def _coerce(name: str, raw: Any) -> Any:
    """Coerce a string (env var / JSON) value to the field's type."""
    if raw is None:
        return None
    kind = _FIELD_TYPES[name]
    if kind in ("int",):
        return int(raw)
    if kind in ("float",):
        return float(raw)
    return str(raw)


def _from_file(path: str | Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    unknown = set(doc) - set(_FIELD_TYPES)
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {sorted(unknown)}")
    return {k: _coerce(k, v) for k, v in doc.items()}


def _from_env(environ: Mapping[str, str]) -> dict[str, Any]:
    values = {}
    for name in _FIELD_TYPES:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None and raw != "":
            values[name] = _coerce(name, raw)
    return values


def load_config(
    overrides: Mapping[str, Any] | None = None,
    *,
    config_path: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
) -> EngineConfig:
    """Resolve the effective config.

    Precedence: ``overrides`` (flags) beat environment variables beat the
    JSON config file beat defaults. ``config_path`` defaults to
    $EIPL_CONFIG; a missing explicit path is an error, while an unset
    EIPL_CONFIG simply skips the file layer.
    """
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}

    path = config_path if config_path is not None else environ.get(CONFIG_PATH_ENV)
    if config_path is not None and not Path(config_path).exists():
        raise FileNotFoundError(f"config file not found: {config_path}")
    if path and Path(path).exists():
        values.update(_from_file(path))
    elif path and config_path is None:
        raise FileNotFoundError(f"{CONFIG_PATH_ENV} points to a missing file: {path}")

    values.update(_from_env(environ))

    if overrides:
        unknown = set(overrides) - set(_FIELD_TYPES)
        if unknown:
            raise ValueError(f"unknown config overrides: {sorted(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})

    return EngineConfig(**values)
