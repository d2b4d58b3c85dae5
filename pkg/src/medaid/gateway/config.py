"""Service configuration: JSON file plus MEDAID_* environment overrides.

Secrets never live in the config file; backends carry only the *name* of the
environment variable holding their API key.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import MedaidError
from ..llmgate import (
    BackendConfig,
    ENV_LLM_API_KEY,
    ENV_LLM_BASE_URL,
    ENV_TRANSLATE_API_KEY,
    ENV_TRANSLATE_BASE_URL,
)

DEFAULT_DISCLAIMER = (
    "MedAid is an experimental assistant for preliminary health information. It does "
    "not provide medical diagnoses or treatment decisions. Always consult a qualified "
    "clinician for any medical concern."
)


@dataclass
class AppConfig:
    dialogue_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(
            base_url="http://localhost:11434/v1", api_key_env=ENV_LLM_API_KEY
        )
    )
    translation_backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(
            base_url="http://localhost:11434/v1", api_key_env=ENV_TRANSLATE_API_KEY
        )
    )
    catalog_path: str | None = None  # None = packaged default catalog
    session_dir: str = "sessions"
    max_exchanges: int = 16
    listen_address: str = "127.0.0.1:8080"
    disclaimer_text: str = DEFAULT_DISCLAIMER
    cors_origins: list[str] = field(default_factory=lambda: ["*"])
    mock_backends: bool = False

    def __post_init__(self):
        if not self.disclaimer_text.strip():
            raise MedaidError("disclaimer_text must be non-empty")

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_address.rpartition(":")
        return host or "127.0.0.1", int(port)


def _backend_from_dict(raw: dict, default: BackendConfig) -> BackendConfig:
    return BackendConfig(
        base_url=raw.get("base_url", default.base_url),
        api_key_env=raw.get("api_key_env", default.api_key_env),
        requests_per_minute=raw.get("requests_per_minute", default.requests_per_minute),
        max_retries=raw.get("max_retries", default.max_retries),
        timeout=raw.get("timeout", default.timeout),
    )


def load_config(path: str | Path | None = None, env: dict | None = None) -> AppConfig:
    env = env if env is not None else dict(os.environ)
    config = AppConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        config = AppConfig(
            dialogue_backend=_backend_from_dict(
                raw.get("dialogue_backend", {}), config.dialogue_backend
            ),
            translation_backend=_backend_from_dict(
                raw.get("translation_backend", {}), config.translation_backend
            ),
            catalog_path=raw.get("catalog_path"),
            session_dir=raw.get("session_dir", config.session_dir),
            max_exchanges=raw.get("max_exchanges", config.max_exchanges),
            listen_address=raw.get("listen_address", config.listen_address),
            disclaimer_text=raw.get("disclaimer_text", config.disclaimer_text),
            cors_origins=raw.get("cors_origins", config.cors_origins),
            mock_backends=raw.get("mock_backends", config.mock_backends),
        )
    if env.get(ENV_LLM_BASE_URL):
        config.dialogue_backend = replace(
            config.dialogue_backend, base_url=env[ENV_LLM_BASE_URL]
        )
    if env.get(ENV_TRANSLATE_BASE_URL):
        config.translation_backend = replace(
            config.translation_backend, base_url=env[ENV_TRANSLATE_BASE_URL]
        )
    if env.get("MEDAID_SESSION_DIR"):
        config.session_dir = env["MEDAID_SESSION_DIR"]
    if env.get("MEDAID_CATALOG"):
        config.catalog_path = env["MEDAID_CATALOG"]
    if env.get("MEDAID_LISTEN"):
        config.listen_address = env["MEDAID_LISTEN"]
    if env.get("MEDAID_DISCLAIMER"):
        config.disclaimer_text = env["MEDAID_DISCLAIMER"]
    if env.get("MEDAID_MAX_EXCHANGES"):
        config.max_exchanges = int(env["MEDAID_MAX_EXCHANGES"])
    if env.get("MEDAID_MOCK"):
        config.mock_backends = env["MEDAID_MOCK"].lower() in ("1", "true", "yes")
    return config
