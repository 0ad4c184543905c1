"""Runtime configuration: one YAML file plus environment variables for
secrets (API keys, warehouse path). See docs/configuration.md."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Optional

import yaml


@dataclass
class PipelineConfig:
    max_iterations: int = 3          # correction rounds after the initial attempt
    fewshot_k: int = 3
    candidate_k: int = 5
    multistep: bool = False
    probe_budget: int = 3            # max exploration probes per question
    correction_max_rows: int = 20    # rows shown to the correction model
    row_cap: int = 1000
    exec_timeout: float = 10.0


@dataclass
class ProviderConfig:
    kind: str = "scripted"           # scripted | http
    script_path: Optional[str] = None
    base_url: str = ""
    model: str = ""
    api_key_env: str = "FINASK_API_KEY"
    retries: int = 2
    timeout: float = 30.0

    @property
    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "")


@dataclass
class PolicyConfig:
    require_limit: bool = True
    max_limit: int = 1000
    require_quarter_condition: bool = True
    allow_ctes: bool = True


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8099
    api_key: str = ""                # optional static X-API-Key requirement
    trace_dir: str = ".finask-traces"
    trace_capacity: int = 1000
    ask_deadline: float = 60.0
    cors_origins: list[str] = field(default_factory=lambda: ["*"])
    static_dir: Optional[str] = None  # serve the chat UI from here when set


@dataclass
class AppConfig:
    db_path: Optional[str] = None    # FINASK_DB wins when set
    fixture_profile: Optional[str] = None
    fewshot_path: Optional[str] = None
    embed_dim: int = 256
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


def _merge_dataclass(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in (data or {}).items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        if isinstance(value, dict):
            kwargs[key] = _merge_dataclass(known[key].type if isinstance(known[key].type, type)
                                           else _SECTION_TYPES[key], value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "pipeline": PipelineConfig,
    "provider": ProviderConfig,
    "policy": PolicyConfig,
    "service": ServiceConfig,
}


def load_config(path: Optional[str] = None) -> AppConfig:
    if path is None:
        return AppConfig()
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a mapping")
    return _merge_dataclass(AppConfig, doc)
