"""Application configuration.

Config is a JSON file; every top-level scalar field can be overridden by
an environment variable named MIDSMITH_<FIELD> (upper-cased field name).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backends import BackendConfig
from .engine import EngineConfig
from .protocol import PromptTemplates


@dataclass(frozen=True)
class AppConfig:
    listen_addr: str = "127.0.0.1:8080"
    dataset_dir: str = "datasets"
    image_store_dir: str = "images"
    report_dir: str = "reports"
    vocab_file: str = "fixtures/vocab.json"
    parallelism: int = 1
    session_capacity: int = 256
    engine: EngineConfig = field(default_factory=lambda: EngineConfig(
        chat=BackendConfig(kind="demo"), t2i=BackendConfig(kind="demo")
    ))
    vqa: BackendConfig = field(default_factory=lambda: BackendConfig(kind="demo"))
    teacher: BackendConfig = field(default_factory=lambda: BackendConfig(kind="demo"))

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_addr.rpartition(":")
        return host or "127.0.0.1", int(port)


_ENV_FIELDS = {
    "listen_addr": str,
    "dataset_dir": str,
    "image_store_dir": str,
    "report_dir": str,
    "vocab_file": str,
    "parallelism": int,
    "session_capacity": int,
}


def _backend_config(raw: dict | None) -> BackendConfig:
    return BackendConfig(**raw) if raw else BackendConfig(kind="demo")


def _engine_config(raw: dict | None) -> EngineConfig:
    raw = dict(raw or {})
    templates_file = raw.pop("templates_file", None)
    templates = (
        PromptTemplates.load_overrides(templates_file) if templates_file else PromptTemplates()
    )
    chat = _backend_config(raw.pop("chat", None))
    t2i = _backend_config(raw.pop("t2i", None))
    return EngineConfig(templates=templates, chat=chat, t2i=t2i, **raw)


def load_app_config(path: str | Path | None = None, env: dict | None = None) -> AppConfig:
    """Build an AppConfig from an optional JSON file plus MIDSMITH_* env
    overrides (environment wins)."""
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    kwargs: dict = {}
    for name, cast in _ENV_FIELDS.items():
        env_value = env.get(f"MIDSMITH_{name.upper()}")
        if env_value is not None:
            kwargs[name] = cast(env_value)
        elif name in raw:
            kwargs[name] = cast(raw[name])
    kwargs["engine"] = _engine_config(raw.get("engine"))
    if "vqa" in raw:
        kwargs["vqa"] = _backend_config(raw["vqa"])
    if "teacher" in raw:
        kwargs["teacher"] = _backend_config(raw["teacher"])
    return AppConfig(**kwargs)
