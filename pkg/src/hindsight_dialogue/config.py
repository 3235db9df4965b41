"""Pipeline configuration: defaults < environment < JSON file < command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .oracle.remote import ENV_KEY, ENV_MODEL, ENV_URL
from .reward import FusionMode

ROLES = ("extract", "grader", "rollout", "mutator")


class ConfigError(ValueError):
    pass


@dataclass
class Endpoint:
    url: str | None = None
    model: str | None = None
    key: str | None = None

    def redacted(self) -> dict[str, Any]:
        d = asdict(self)
        if d["key"]:
            d["key"] = "***"
        return d


@dataclass
class PipelineConfig:
    oracles: dict[str, Endpoint] = field(default_factory=lambda: {r: Endpoint() for r in ROLES})
    beta: float = 1.0
    mode: FusionMode = FusionMode.MULTIPLICATIVE
    generic_threshold: float = 0.8
    drop_empty_continue: bool = False
    group_size: int = 5
    autoprompt_k: int = 30
    autoprompt_n: int = 4
    seed: int = 0
    include_failures: bool = False

    def validate(self) -> "PipelineConfig":
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0 (got {self.beta})")
        if not 0 < self.generic_threshold <= 1:
            raise ConfigError(f"generic_threshold must be in (0, 1] (got {self.generic_threshold})")
        if self.group_size < 2:
            raise ConfigError(f"group_size must be >= 2 (got {self.group_size})")
        if self.autoprompt_k < 1 or self.autoprompt_n < 1:
            raise ConfigError("autoprompt K and n_per_iter must be >= 1")
        try:
            self.mode = FusionMode(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(self.oracles) - set(ROLES)
        if unknown:
            raise ConfigError(f"unknown oracle roles: {sorted(unknown)}")
        return self

    def endpoint(self, role: str) -> Endpoint:
        return self.oracles.get(role) or Endpoint()

    def stage_seed(self, stage: str) -> int:
        """Derive a per-stage seed from the global seed (stable across runs)."""
        h = 0
        for ch in f"{self.seed}:{stage}":
            h = (h * 131 + ord(ch)) % (2**31 - 1)
        return h

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "oracles"}
        d["mode"] = FusionMode(self.mode).value
        d["oracles"] = {r: e.redacted() for r, e in sorted(self.oracles.items())}
        return d


def _apply(cfg: PipelineConfig, values: Mapping[str, Any]) -> None:
    names = {f.name for f in fields(cfg)}
    for k, v in values.items():
        if v is None:
            continue
        if k == "oracles":
            for role, ep in v.items():
                cur = cfg.oracles.setdefault(role, Endpoint())
                for attr in ("url", "model", "key"):
                    if ep.get(attr) is not None:
                        setattr(cur, attr, ep[attr])
        elif k in names:
            setattr(cfg, k, v)
        else:
            raise ConfigError(f"unknown config key {k!r}")


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    cfg = PipelineConfig()
    env = os.environ if environ is None else environ
    shared = {"url": env.get(ENV_URL), "model": env.get(ENV_MODEL), "key": env.get(ENV_KEY)}
    _apply(cfg, {"oracles": {r: shared for r in ROLES}})
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        _apply(cfg, data)
    _apply(cfg, overrides or {})
    return cfg.validate()


def write_resolved(cfg: PipelineConfig, out_path: str | Path) -> Path:
    """Write the resolved config next to an output file as ``<out>.config.json``."""
    out_path = Path(out_path)
    target = out_path.with_name(out_path.name + ".config.json")
    target.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target
