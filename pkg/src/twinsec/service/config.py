"""Service configuration.

Precedence: CLI flags > environment variables (prefix ``TTS_``) > config
file (JSON) > built-in defaults. ``TTS_CONFIG`` names the config file
when no flag does.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from ..errors import SpecFormatError

ENV_PREFIX = "TTS_"

# dev tokens; a deployment supplies its own registry via config
DEFAULT_TOKENS: dict[str, dict] = {
    "operator-token": {"entity_id": "op1", "roles": ["PlantOperator"]},
    "analyst-token": {"entity_id": "an1", "roles": ["SecurityAnalyst"]},
    "auditor-token": {"entity_id": "au1", "roles": ["Auditor"]},
    "system-token": {"entity_id": "system", "roles": ["System"]},
}


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    key_seed: str = "twinsec-dev"
    hash_algorithm: str = "sha256"
    signature_algorithm: str = "ed25519"
    session_ttl: float = 3600.0
    logical_clock: bool = False
    telemetry_buffer: int = 4096
    tokens: Mapping[str, dict] = field(default_factory=lambda: dict(DEFAULT_TOKENS))
    static_dir: str | None = None

    def to_obj(self) -> dict:
        return {
            "host": self.host,
            "port": self.port,
            "key_seed": self.key_seed,
            "hash_algorithm": self.hash_algorithm,
            "signature_algorithm": self.signature_algorithm,
            "session_ttl": self.session_ttl,
            "logical_clock": self.logical_clock,
            "telemetry_buffer": self.telemetry_buffer,
            "tokens": dict(self.tokens),
            "static_dir": self.static_dir,
        }


_FIELD_PARSERS = {
    "host": str,
    "port": int,
    "key_seed": str,
    "hash_algorithm": str,
    "signature_algorithm": str,
    "session_ttl": float,
    "logical_clock": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "telemetry_buffer": int,
    "static_dir": str,
}


def load_config(
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
    config_path: str | Path | None = None,
) -> ServiceConfig:
    env = os.environ if env is None else env
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    config = ServiceConfig()

    path = config_path or overrides.get("config") or env.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecFormatError(f"config file {path}: {exc}") from exc
        config = _apply(config, obj, f"config file {path}")

    env_values: dict[str, Any] = {}
    for name in _FIELD_PARSERS:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            env_values[name] = raw
    raw_tokens = env.get(ENV_PREFIX + "TOKENS")
    if raw_tokens:
        try:
            env_values["tokens"] = json.loads(raw_tokens)
        except json.JSONDecodeError as exc:
            raise SpecFormatError(f"{ENV_PREFIX}TOKENS: {exc}") from exc
    config = _apply(config, env_values, "environment")

    config = _apply(config, {k: v for k, v in overrides.items() if k != "config"}, "flags")
    return config


def _apply(config: ServiceConfig, values: Mapping[str, Any], source: str) -> ServiceConfig:
    kwargs: dict[str, Any] = {}
    for key, value in values.items():
        if key == "tokens":
            if not isinstance(value, Mapping):
                raise SpecFormatError(f"{source}: tokens must be an object")
            kwargs["tokens"] = {str(t): dict(spec) for t, spec in value.items()}
        elif key in _FIELD_PARSERS:
            try:
                kwargs[key] = _FIELD_PARSERS[key](value)
            except (TypeError, ValueError) as exc:
                raise SpecFormatError(f"{source}: bad value for {key}: {value!r}") from exc
        else:
            raise SpecFormatError(f"{source}: unknown configuration key {key!r}")
    return replace(config, **kwargs) if kwargs else config
