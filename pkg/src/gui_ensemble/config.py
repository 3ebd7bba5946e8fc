"""Run configuration: endpoint roster, budget, mode and run-level knobs, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .core import CoordConvention, CoordMode
from .errors import ConfigError, ConfigParseError
from .gateway import EndpointConfig, Role
from .orchestrator import GAIR, EpisodeBudget, Fallback, Mode, ModeKind
from .prompts import Templates

DEFAULT_PARALLELISM = 4
REFLECT_SCOPES = ("hinted", "all")


@dataclass(frozen=True)
class RunConfig:
    endpoints: tuple[EndpointConfig, ...]
    budget: EpisodeBudget = field(default_factory=EpisodeBudget)
    mode: Mode = GAIR
    parallelism: int = DEFAULT_PARALLELISM
    template_dir: Optional[str] = None
    trace_path: Optional[str] = None
    attach_screenshot_to_general: bool = True
    reflect_scope: str = "hinted"

    def __post_init__(self):
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        _validate(self)

    @property
    def general(self) -> EndpointConfig:
        return next(e for e in self.endpoints if e.role is Role.GENERAL)

    @property
    def specialists(self) -> list[EndpointConfig]:
        return [e for e in self.endpoints if e.role is Role.SPECIALIST]

    def endpoint(self, endpoint_id: str) -> EndpointConfig:
        for e in self.endpoints:
            if e.id == endpoint_id:
                return e
        raise ConfigError(f"no endpoint with id {endpoint_id!r}")

    def with_mode(self, mode: Mode) -> "RunConfig":
        return replace(self, mode=mode)

    def templates(self) -> Templates:
        return Templates.load(self.template_dir)

    def to_dict(self) -> dict:
        return {
            "endpoints": [e.to_dict() for e in self.endpoints],
            "budget": {"max_reflection_rounds": self.budget.max_reflection_rounds,
                       "fallback": self.budget.fallback.value},
            "mode": str(self.mode),
            "parallelism": self.parallelism,
            "template_dir": self.template_dir,
            "trace_path": self.trace_path,
            "attach_screenshot_to_general": self.attach_screenshot_to_general,
            "reflect_scope": self.reflect_scope,
        }

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        return parse_config(data)


def _validate(cfg: RunConfig) -> None:
    ids = [e.id for e in cfg.endpoints]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigParseError("endpoints", f"duplicate endpoint ids {dupes}")
    n_general = sum(e.role is Role.GENERAL for e in cfg.endpoints)
    if n_general != 1:
        raise ConfigParseError("endpoints", "exactly one general role")
    if not any(e.role is Role.SPECIALIST for e in cfg.endpoints):
        raise ConfigParseError("endpoints", "at least one specialist role")
    if cfg.parallelism < 1:
        raise ConfigParseError("parallelism", "must be >= 1")
    if cfg.reflect_scope not in REFLECT_SCOPES:
        raise ConfigParseError("reflect_scope", f"must be one of {REFLECT_SCOPES}")
    if cfg.mode.kind is ModeKind.SM:
        spec_ids = {e.id for e in cfg.endpoints if e.role is Role.SPECIALIST}
        if cfg.mode.specialist_id not in spec_ids:
            raise ConfigParseError("mode", f"SM names unknown specialist {cfg.mode.specialist_id!r}")


_ROLE_ALIASES = {"specialist": Role.SPECIALIST, "general": Role.GENERAL}
_CONV_ALIASES = {
    "absolutepixels": CoordMode.ABSOLUTE, "absolute": CoordMode.ABSOLUTE, "pixels": CoordMode.ABSOLUTE,
    "normalizedthousand": CoordMode.NORMALIZED_1000, "normalized_1000": CoordMode.NORMALIZED_1000,
    "normalized": CoordMode.NORMALIZED_1000,
}


def _need(d: dict, key: str, path: str, kind=str):
    if key not in d:
        raise ConfigParseError(f"{path}.{key}", "required")
    value = d[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigParseError(f"{path}.{key}", "must be an integer")
    if kind is not int and not isinstance(value, kind):
        raise ConfigParseError(f"{path}.{key}", f"must be a {getattr(kind, '__name__', 'number')}")
    return value


def _opt(d: dict, key: str, path: str, default, kind):
    return _need(d, key, path, kind) if d.get(key) is not None else default


def _parse_endpoint(d: Any, path: str) -> EndpointConfig:
    if not isinstance(d, dict):
        raise ConfigParseError(path, "must be an object")
    role_raw = _need(d, "role", path)
    role = _ROLE_ALIASES.get(role_raw.lower())
    if role is None:
        raise ConfigParseError(f"{path}.role", "must be 'specialist' or 'general'")
    conv_raw = _opt(d, "coord_convention", path, "AbsolutePixels", str)
    conv = _CONV_ALIASES.get(conv_raw.lower().replace("-", "_"))
    if conv is None:
        raise ConfigParseError(f"{path}.coord_convention", "must be AbsolutePixels or NormalizedThousand")
    timeout = _opt(d, "timeout_ms", path, 60_000, int)
    if timeout <= 0:
        raise ConfigParseError(f"{path}.timeout_ms", "must be > 0")
    retries = _opt(d, "max_retries", path, 2, int)
    if retries < 0:
        raise ConfigParseError(f"{path}.max_retries", "must be >= 0")
    tokens = _opt(d, "max_output_tokens", path, 512, int)
    if tokens <= 0:
        raise ConfigParseError(f"{path}.max_output_tokens", "must be > 0")
    temperature = _opt(d, "temperature", path, 0.0, (int, float))
    for forbidden in ("api_key", "token", "authorization"):
        if forbidden in d:
            raise ConfigParseError(f"{path}.{forbidden}", "secrets go in environment variables, not config files")
    return EndpointConfig(
        id=_need(d, "id", path),
        base_url=_opt(d, "base_url", path, "http://localhost:8000/v1", str),
        model_name=_opt(d, "model_name", path, _need(d, "id", path), str),
        role=role,
        coord_convention=CoordConvention(conv, _opt(d, "coord_note", path, "", str)),
        timeout_ms=timeout,
        max_retries=retries,
        max_output_tokens=tokens,
        temperature=float(temperature),
        api_key_env=_opt(d, "api_key_env", path, None, str),
    )


def parse_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigParseError("$", "config must be a JSON object")
    raw_eps = data.get("endpoints")
    if not isinstance(raw_eps, list) or not raw_eps:
        raise ConfigParseError("endpoints", "must be a non-empty list")
    endpoints = tuple(_parse_endpoint(e, f"endpoints[{i}]") for i, e in enumerate(raw_eps))

    b = data.get("budget", {})
    if not isinstance(b, dict):
        raise ConfigParseError("budget", "must be an object")
    rounds = _opt(b, "max_reflection_rounds", "budget", 2, int)
    if rounds < 0:
        raise ConfigParseError("budget.max_reflection_rounds", "must be >= 0")
    fallback_raw = _opt(b, "fallback", "budget", Fallback.GENERAL_BEST_GUESS.value, str)
    try:
        fallback = Fallback(fallback_raw)
    except ValueError:
        raise ConfigParseError("budget.fallback", f"must be one of {[f.value for f in Fallback]}") from None

    try:
        mode = Mode.parse(_opt(data, "mode", "$", "GAIR", str))
    except ValueError as exc:
        raise ConfigParseError("mode", str(exc)) from None

    return RunConfig(
        endpoints=endpoints,
        budget=EpisodeBudget(rounds, fallback),
        mode=mode,
        parallelism=_opt(data, "parallelism", "$", DEFAULT_PARALLELISM, int),
        template_dir=_opt(data, "template_dir", "$", None, str),
        trace_path=_opt(data, "trace_path", "$", None, str),
        attach_screenshot_to_general=_opt(data, "attach_screenshot_to_general", "$", True, bool),
        reflect_scope=_opt(data, "reflect_scope", "$", "hinted", str),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigParseError("$", f"invalid JSON: {exc}") from None
    cfg = parse_config(data)
    if cfg.template_dir and not Path(cfg.template_dir).is_absolute():
        cfg = replace(cfg, template_dir=str(path.parent / cfg.template_dir))
    return cfg
