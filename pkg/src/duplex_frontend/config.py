"""Pipeline configuration: one declarative YAML/JSON file plus flag overrides.

Keys mirror the stage configs. Unknown keys are rejected so that typos fail
loudly rather than silently keeping a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .controller import ControllerConfig, FlipProbs
from .errors import ConfigError
from .labeling import DEFAULT_SYSTEM_PROMPT
from .scenarios import KINDS, ScenarioConfig
from .timestamps import RefineConfig


@dataclass
class PipelineConfig:
    seed: int = 0
    chunk_ms: float = 600.0
    overlap_min_ms: float = 60.0
    pad_ms: float = 15.0
    alpha: float = 0.5
    jobs: int = 1
    pools: Optional[str] = None
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    scenario_mix: dict = field(default_factory=lambda: {k: 1.0 for k in KINDS})
    n_sessions: int = 8
    write_stems: bool = False
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    perturb: FlipProbs = field(default_factory=FlipProbs)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.n_sessions < 0:
            raise ConfigError("n_sessions must be non-negative")
        if self.overlap_min_ms < 0 or self.overlap_min_ms > self.chunk_ms:
            raise ConfigError(f"overlap_min_ms {self.overlap_min_ms} outside [0, chunk_ms]")
        bad = set(self.scenario_mix) - set(KINDS)
        if bad:
            raise ConfigError(f"unknown scenario kinds in scenario_mix: {sorted(bad)}")
        # shared constants flow into the stage configs
        self.scenario = dataclasses.replace(self.scenario, chunk_ms=self.chunk_ms,
                                            overlap_min_ms=self.overlap_min_ms,
                                            chars_per_second=self.controller.chars_per_second)
        self.refine = dataclasses.replace(self.refine, pad_ms=self.pad_ms)
        self.controller = dataclasses.replace(self.controller, chunk_ms=self.chunk_ms)

    def echo(self) -> dict:
        return _plain(dataclasses.asdict(self))


_SECTIONS = {"scenario": ScenarioConfig, "refine": RefineConfig, "controller": ControllerConfig,
             "perturb": FlipProbs}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Read ``path`` (YAML or JSON), apply ``overrides`` (flags win), validate.

    Override keys are top-level names or ``section.key`` for stage configs.
    """
    raw: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        base = path.parent
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            raw.setdefault(section, {})[sub] = value
        else:
            raw[key] = value

    top = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            top[key] = _build(_SECTIONS[key], value, key)
        else:
            top[key] = value
    if isinstance(top.get("pools"), str) and path is not None:
        p = Path(top["pools"])
        top["pools"] = str(p if p.is_absolute() else base / p)
    cfg = _build(PipelineConfig, top, "config")
    if cfg.pools is not None and not Path(cfg.pools).exists():
        raise ConfigError(f"asset pool index {cfg.pools} does not exist")
    return cfg
