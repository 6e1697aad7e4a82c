"""YAML run configuration: endpoint profiles, tools and per-stage policies.

Precedence is defaults < config file < environment (secrets, URLs) < CLI flags.
Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datagen import SPLIT_PRESETS, DatagenPolicy
from .inference import InferencePolicy
from .llm import ChatClient, ChatModel, EndpointProfile, MockLLM
from .tools import CICERO_RELATIONS, COMET_RELATIONS, TOOL_NAME, HttpBackend, MockBackend, Registry, ToolSpec
from .tools import CICERO_DESCRIPTION, TOOL_DESCRIPTION


class ConfigError(ValueError):
    pass


@dataclass
class EndpointConfig:
    kind: str = "http"  # http | mock
    url: str = ""
    model: str = ""
    key: str | None = None
    script: str | None = None
    strict: bool = True
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    max_requests: int | None = None
    max_total_tokens: int | None = None
    requests_per_second: float | None = None


@dataclass
class ToolConfig:
    relations: list[str]
    description: str = TOOL_DESCRIPTION
    name: str = TOOL_NAME
    backend: str = "auto"  # auto | mock | http
    url: str = ""
    k: int = 5


@dataclass
class DatagenConfig:
    full_context: bool = False
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_preset: str | None = None
    seed: int = 0


@dataclass
class InferenceConfig:
    max_tool_calls_per_turn: int = 1
    on_malformed: str = "fallback"
    tool_arg_source: str = "model"
    context_chars: int | None = None
    temperature: float = 0.0
    max_tokens: int = 256


@dataclass
class Config:
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)
    tools: dict[str, ToolConfig] = field(default_factory=lambda: {
        "comet": ToolConfig(list(COMET_RELATIONS)),
        "cicero": ToolConfig(list(CICERO_RELATIONS), CICERO_DESCRIPTION),
    })
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    jobs: int | None = None

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for ep in d["endpoints"].values():
            if ep.get("key"):
                ep["key"] = "***"
        return d

    def validate(self) -> None:
        if self.datagen.split_preset is not None and self.datagen.split_preset not in SPLIT_PRESETS:
            raise ConfigError(f"unknown split preset {self.datagen.split_preset!r}")
        ratios = self.split_ratios()
        if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
            raise ConfigError(f"split ratios must be three positives summing to 1: {ratios}")
        for name, ep in self.endpoints.items():
            if ep.kind not in ("http", "mock"):
                raise ConfigError(f"endpoint {name}: kind must be http or mock")
            if ep.kind == "mock" and not ep.script:
                raise ConfigError(f"endpoint {name}: mock endpoints need a script")
        for name, t in self.tools.items():
            if not t.relations:
                raise ConfigError(f"tool {name}: empty relation set")
            if t.backend not in ("auto", "mock", "http"):
                raise ConfigError(f"tool {name}: backend must be auto, mock or http")
        self.inference_policy()

    def split_ratios(self) -> tuple[float, ...]:
        if self.datagen.split_preset:
            return SPLIT_PRESETS[self.datagen.split_preset]
        return tuple(float(x) for x in self.datagen.split)

    def datagen_policy(self, jobs: int = 1) -> DatagenPolicy:
        return DatagenPolicy(full_context=self.datagen.full_context, jobs=jobs)

    def inference_policy(self) -> InferencePolicy:
        i = self.inference
        try:
            return InferencePolicy(i.max_tool_calls_per_turn, i.on_malformed, i.tool_arg_source,
                                   i.context_chars, temperature=i.temperature, max_tokens=i.max_tokens)
        except ValueError as exc:
            raise ConfigError(f"inference: {exc}") from None

    def model(self, name: str) -> ChatModel:
        """Resolve an endpoint by profile name, or ``mock:<script.json>``."""
        if name.startswith("mock:"):
            return MockLLM.from_file(name[5:])
        ep = self.endpoints.get(name)
        if ep is None:
            if os.environ.get("EKTC_LLM_URL"):
                ep = EndpointConfig(model=name)
            else:
                raise ConfigError(f"no endpoint profile {name!r} (and EKTC_LLM_URL unset)")
        if ep.kind == "mock":
            m = MockLLM.from_file(ep.script)
            m.strict = ep.strict
            return m
        fields = {f.name for f in dataclasses.fields(EndpointProfile)}
        profile = EndpointProfile(name=name, **{k: v for k, v in dataclasses.asdict(ep).items() if k in fields})
        return ChatClient(profile.with_env())

    def registry(self, tool: str) -> Registry:
        t = self.tools.get(tool)
        if t is None:
            raise ConfigError(f"no tool {tool!r}; known: {sorted(self.tools)}")
        url = os.environ.get("EKTC_TOOL_URL") or t.url
        if t.backend == "http" or (t.backend == "auto" and url):
            if not url:
                raise ConfigError(f"tool {tool}: http backend needs a url or EKTC_TOOL_URL")
            backend = HttpBackend(url)
        else:
            backend = MockBackend()
        return Registry().register(ToolSpec(t.name, t.description, tuple(t.relations)), backend, k=t.k)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict[str, Any] | None) -> Config:
    data = dict(data or {})
    unknown = set(data) - {f.name for f in dataclasses.fields(Config)}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    cfg = Config()
    if "endpoints" in data:
        cfg.endpoints = {k: _build(EndpointConfig, v, f"endpoints.{k}") for k, v in data["endpoints"].items()}
    if "tools" in data:
        for k, v in data["tools"].items():
            # entries for the built-in tools override fields; new tools must be complete
            base = dataclasses.asdict(cfg.tools[k]) if k in cfg.tools and isinstance(v, dict) else {}
            cfg.tools[k] = _build(ToolConfig, {**base, **v} if base else v, f"tools.{k}")
    if "datagen" in data:
        cfg.datagen = _build(DatagenConfig, data["datagen"], "datagen")
    if "inference" in data:
        cfg.inference = _build(InferenceConfig, data["inference"], "inference")
    if "jobs" in data:
        cfg.jobs = data["jobs"]
    cfg.validate()
    return cfg


def load(path: str | os.PathLike | None) -> Config:
    if path is None:
        return from_dict(None)
    with open(path, encoding="utf-8") as fh:
        cfg = from_dict(yaml.safe_load(fh))
    # mock scripts are relative to the config file, not the working directory
    base = Path(path).resolve().parent
    for ep in cfg.endpoints.values():
        if ep.script and not Path(ep.script).is_absolute():
            ep.script = str(base / ep.script)
    return cfg
