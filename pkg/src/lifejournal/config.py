"""Run configuration: a flat ``key = value`` file, validated on load.

Lines starting with ``#`` are comments. Paths are resolved relative to the
config file. In benchmark runs the token ``{experiment}`` inside a path value
expands to the experiment directory. Secrets are never stored here: live
providers read them from the environment variable named by ``*.api_key_env``.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import yaml

from lifejournal.errors import ConfigError
from lifejournal.geo import FixtureMapProvider, HttpMapProvider, MapProvider
from lifejournal.llm.gateway import Gateway, RoleBinding
from lifejournal.llm.prompts import PromptCatalog
from lifejournal.llm.providers import (
    HallucinatingProvider,
    HttpChatProvider,
    Provider,
    RecordingProvider,
    ReplayProvider,
)
from lifejournal.llm.scripted import scripted_provider
from lifejournal.motion import DEFAULT_THRESHOLDS, MotionThresholds
from lifejournal.pipeline import SOURCE_PIPELINE, SOURCE_SENLLM, PipelineSettings
from lifejournal.trace import DutyCycleConfig

ROLES = ("vlm", "light", "mid")
PROVIDER_KINDS = ("mock", "replay", "live")
MAP_KINDS = ("fixture", "live")

# key -> (type, default, help)
SCALAR_KEYS: dict[str, tuple[type, object, str]] = {
    "collect_duration_t": (float, 15.0, "seconds of sensing per activation"),
    "period_T": (float, 60.0, "seconds between activations"),
    "batch_size": (int, 15, "windows per refinement batch"),
    "horizon_s": (float, 3600.0, "journal horizon length in seconds"),
    "tz_offset_minutes": (int, 0, "local time offset from UTC for [HH:MM] labels"),
    "concise": (bool, True, "include the brevity instruction in refinement prompts"),
    "thinning": (int, 1, "keep one window out of every N"),
    "concurrency": (int, 4, "max in-flight provider calls and worker threads"),
    "retries": (int, 2, "transport retries per provider call"),
    "backoff_s": (float, 1.0, "first retry delay, doubled per retry"),
    "cache_path": (Path, None, "persistent grid-cell context cache (memory-only if unset)"),
    "thresholds_file": (Path, None, "expert YAML overriding motion thresholds"),
    "catalog_file": (Path, None, "prompt catalog overriding the bundled one"),
    "map.kind": (str, "fixture", "fixture | live"),
    "map.fixtures": (Path, None, "directory of <grid key>.png map images"),
    "map.endpoint": (str, None, "static map endpoint URL"),
    "map.style": (str, None, "extra style query for the live map endpoint"),
    "map.api_key_env": (str, None, "environment variable holding the map API key"),
}

ROLE_FIELDS: dict[str, tuple[type, str]] = {
    "kind": (str, "mock | replay | live"),
    "model": (str, "model identifier (part of the replay digest)"),
    "endpoint": (str, "chat completions URL for live providers"),
    "fixtures": (Path, "replay fixture directory (<digest>.txt files)"),
    "record": (Path, "store every reply here as a replay fixture"),
    "price_in": (float, "dollars per 1e6 input tokens"),
    "price_out": (float, "dollars per 1e6 output tokens"),
    "api_key_env": (str, "environment variable holding the API key"),
    "hallucination_rate": (float, "mock only: fraction of replies without a summary"),
    "hallucination_seed": (int, "mock only: seed for the hallucination draws"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, kind: type, raw: str, base: Path | None) -> object:
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is Path:
            if "{experiment}" in raw or os.path.isabs(raw) or base is None:
                return raw
            return str((base / raw).resolve())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _key_type(key: str) -> type:
    if key in SCALAR_KEYS:
        return SCALAR_KEYS[key][0]
    parts = key.split(".")
    if len(parts) == 3 and parts[0] == "role" and parts[1] in ROLES and parts[2] in ROLE_FIELDS:
        return ROLE_FIELDS[parts[2]][0]
    raise ConfigError(f"unknown config key {key!r}")


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=dict)

    def get(self, key: str, default: object = None) -> object:
        if key in self.values:
            return self.values[key]
        if key in SCALAR_KEYS:
            return SCALAR_KEYS[key][1]
        return default

    def set(self, key: str, raw: str, base: Path | None = None) -> None:
        self.values[key] = _convert(key, _key_type(key), raw, base)
        self.validate()

    def merged(self, overrides: Mapping[str, str]) -> RunConfig:
        out = RunConfig(dict(self.values))
        for k, v in overrides.items():
            out.values[k] = _convert(k, _key_type(k), v, Path.cwd())
        out.validate()
        return out

    @classmethod
    def parse(cls, text: str, base: Path | None = None, origin: str = "<config>") -> RunConfig:
        cfg = cls()
        for line_no, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{origin}:{line_no}: expected 'key = value'")
            key = key.strip()
            try:
                cfg.values[key] = _convert(key, _key_type(key), value, base)
            except ConfigError as exc:
                raise ConfigError(f"{origin}:{line_no}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text, base=path.parent.resolve(), origin=str(path))

    def validate(self) -> None:
        t, T = float(self.get("collect_duration_t")), float(self.get("period_T"))
        if not 0 < t <= T:
            raise ConfigError(f"need 0 < collect_duration_t <= period_T, got t={t}, T={T}")
        for key in ("batch_size", "thinning", "concurrency"):
            if int(self.get(key)) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if int(self.get("retries")) < 0 or float(self.get("backoff_s")) < 0:
            raise ConfigError("retries and backoff_s must be >= 0")
        if float(self.get("horizon_s")) <= 0:
            raise ConfigError("horizon_s must be > 0")
        if self.get("map.kind") not in MAP_KINDS:
            raise ConfigError(f"map.kind must be one of {', '.join(MAP_KINDS)}")
        for role in ROLES:
            kind = self.values.get(f"role.{role}.kind")
            if kind is not None and kind not in PROVIDER_KINDS:
                raise ConfigError(f"role.{role}.kind must be one of {', '.join(PROVIDER_KINDS)}")
            rate = self.values.get(f"role.{role}.hallucination_rate")
            if rate is not None and not 0.0 <= float(rate) <= 1.0:
                raise ConfigError(f"role.{role}.hallucination_rate must be in [0, 1]")

    def effective(self) -> dict[str, object]:
        """All scalar settings with defaults filled in, plus configured role keys."""
        out = {k: self.get(k) for k in SCALAR_KEYS}
        out.update({k: v for k, v in self.values.items() if k.startswith("role.")})
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(out.items())}

    # -- construction ----------------------------------------------------

    def path(self, key: str, experiment: Path | None = None) -> Path | None:
        raw = self.get(key)
        if raw is None:
            return None
        raw = str(raw)
        if "{experiment}" in raw:
            if experiment is None:
                raise ConfigError(f"{key} uses {{experiment}} outside a benchmark run")
            raw = raw.replace("{experiment}", str(experiment))
        return Path(raw)

    def settings(self) -> PipelineSettings:
        thresholds = DEFAULT_THRESHOLDS
        tf = self.path("thresholds_file")
        if tf is not None:
            try:
                thresholds = MotionThresholds.from_yaml(tf)
            except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
                raise ConfigError(f"thresholds_file {tf}: {exc}") from None
        return PipelineSettings(
            duty=DutyCycleConfig(float(self.get("collect_duration_t")), float(self.get("period_T"))),
            batch_size=int(self.get("batch_size")),
            horizon_s=float(self.get("horizon_s")),
            tz_offset_minutes=int(self.get("tz_offset_minutes")),
            concise=bool(self.get("concise")),
            thinning=int(self.get("thinning")),
            workers=int(self.get("concurrency")),
            thresholds=thresholds,
        )

    def catalog(self) -> PromptCatalog:
        return PromptCatalog.load(self.path("catalog_file"))

    def _provider(self, role: str, experiment: Path | None) -> RoleBinding:
        kind = self.values.get(f"role.{role}.kind")
        if kind is None:
            raise ConfigError(
                f"no provider bound to role {role!r}; set role.{role}.kind (mock | replay | live) and role.{role}.model"
            )
        model = str(self.values.get(f"role.{role}.model", f"{kind}-{role}"))
        provider: Provider
        if kind == "mock":
            provider = scripted_provider()
            rate = self.values.get(f"role.{role}.hallucination_rate")
            if rate:
                provider = HallucinatingProvider(provider, float(rate), int(self.values.get(f"role.{role}.hallucination_seed", 0)))
        elif kind == "replay":
            fixtures = self.path(f"role.{role}.fixtures", experiment)
            if fixtures is None:
                if experiment is None:
                    raise ConfigError(f"role.{role}.fixtures is required for replay providers")
                fixtures = experiment / "fixtures" / "llm"
            provider = ReplayProvider(fixtures)
        else:
            endpoint = self.values.get(f"role.{role}.endpoint")
            if not endpoint:
                raise ConfigError(f"role.{role}.endpoint is required for live providers")
            env = self.values.get(f"role.{role}.api_key_env")
            api_key = os.environ.get(str(env)) if env else None
            if env and not api_key:
                raise ConfigError(f"environment variable {env} (role.{role}.api_key_env) is not set")
            provider = HttpChatProvider(str(endpoint), api_key)
        record = self.path(f"role.{role}.record", experiment)
        if record is not None:
            provider = RecordingProvider(provider, record)
        return RoleBinding(
            provider=provider,
            model=model,
            price_in=self.values.get(f"role.{role}.price_in"),
            price_out=self.values.get(f"role.{role}.price_out"),
        )

    def gateway(
        self,
        mode: str = SOURCE_PIPELINE,
        experiment: Path | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> Gateway:
        catalog = self.catalog()
        if mode == SOURCE_SENLLM:
            template_ids = ["senllm_journal"]
        else:
            template_ids = [t for t in catalog.templates if t != "senllm_journal"]
        needed = {catalog[t].role for t in template_ids}
        roles = {role: self._provider(role, experiment) for role in sorted(needed)}
        return Gateway(
            roles,
            catalog=catalog,
            retries=int(self.get("retries")),
            backoff_s=float(self.get("backoff_s")),
            max_inflight=int(self.get("concurrency")),
            sleep=sleep,
        )

    def map_provider(self, experiment: Path | None = None) -> MapProvider:
        if self.get("map.kind") == "fixture":
            fixtures = self.path("map.fixtures", experiment)
            if fixtures is None:
                if experiment is None:
                    raise ConfigError("map.fixtures is required when map.kind = fixture")
                fixtures = experiment / "fixtures" / "maps"
            return FixtureMapProvider(fixtures)
        endpoint = self.get("map.endpoint")
        if not endpoint:
            raise ConfigError("map.endpoint is required when map.kind = live")
        env = self.get("map.api_key_env")
        api_key = os.environ.get(str(env)) if env else None
        if env and not api_key:
            raise ConfigError(f"environment variable {env} (map.api_key_env) is not set")
        return HttpMapProvider(str(endpoint), api_key, style=self.get("map.style"))


def describe_keys() -> str:
    lines = [f"  {k:<22} {h} (default: {d})" for k, (_, d, h) in SCALAR_KEYS.items()]
    lines += [f"  role.<{'|'.join(ROLES)}>.{k:<12} {h}" for k, (_, h) in ROLE_FIELDS.items()]
    return "\n".join(lines)
