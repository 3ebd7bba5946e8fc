"""Chat-completions client for model endpoints, plus a scripted stand-in for tests and simulation.

Both gateways expose ``send(cfg, messages) -> ModelReply`` and
``for_episode(episode_id)``; the orchestrator never knows which one it holds.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence, Union

import httpx

from .core import ABSOLUTE, CoordConvention, ScreenshotMeta
from .errors import (
    EndpointError,
    GatewayError,
    GatewayTimeout,
    ImageEncodingError,
    ScriptExhausted,
    TransportError,
    gateway_error_from_tag,
)

log = logging.getLogger(__name__)

API_KEY_ENV_PREFIX = "GUI_ENSEMBLE_API_KEY_"


class Role(str, Enum):
    SPECIALIST = "Specialist"
    GENERAL = "General"


class MessageRole(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class EndpointConfig:
    id: str
    base_url: str
    model_name: str
    role: Role
    coord_convention: CoordConvention = ABSOLUTE
    timeout_ms: int = 60_000
    max_retries: int = 2
    max_output_tokens: int = 512
    temperature: float = 0.0
    api_key_env: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def key_env_var(self) -> str:
        if self.api_key_env:
            return self.api_key_env
        return API_KEY_ENV_PREFIX + re.sub(r"[^A-Za-z0-9]", "_", self.id).upper()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "base_url": self.base_url,
            "model_name": self.model_name,
            "role": self.role.value,
            "coord_convention": self.coord_convention.mode.value,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "max_output_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        }


@dataclass(frozen=True)
class ChatMessage:
    role: MessageRole
    text: str
    images: tuple[ScreenshotMeta, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "role", MessageRole(self.role))
        object.__setattr__(self, "images", tuple(self.images))
        if self.images and self.role is not MessageRole.USER:
            raise ValueError("images can only be attached to user messages")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"role": self.role.value, "text": self.text}
        if self.images:
            d["images"] = [m.to_dict() for m in self.images]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChatMessage":
        return cls(d["role"], d["text"], tuple(ScreenshotMeta.from_dict(m) for m in d.get("images", ())))


def system(text: str) -> ChatMessage:
    return ChatMessage(MessageRole.SYSTEM, text)


def user(text: str, images: Sequence[ScreenshotMeta] = ()) -> ChatMessage:
    return ChatMessage(MessageRole.USER, text, tuple(images))


def assistant(text: str) -> ChatMessage:
    return ChatMessage(MessageRole.ASSISTANT, text)


@dataclass(frozen=True)
class ModelReply:
    text: str
    latency_ms: float
    endpoint_id: str


class Gateway(Protocol):
    def send(self, cfg: EndpointConfig, messages: Sequence[ChatMessage]) -> ModelReply: ...

    def for_episode(self, episode_id: str) -> "Gateway": ...


def encode_image(meta: ScreenshotMeta) -> str:
    """Return the screenshot as a base64 data URL."""
    try:
        data = Path(meta.image_ref).read_bytes()
    except (OSError, TypeError, ValueError) as exc:
        raise ImageEncodingError(f"cannot read screenshot {meta.image_ref!r}: {exc}") from exc
    if not data:
        raise ImageEncodingError(f"screenshot {meta.image_ref!r} is empty")
    return f"data:{meta.format.mime};base64,{base64.b64encode(data).decode('ascii')}"


def build_request_body(cfg: EndpointConfig, messages: Sequence[ChatMessage]) -> dict:
    wire = []
    for msg in messages:
        if msg.images:
            content: Any = [{"type": "text", "text": msg.text}]
            content += [{"type": "image_url", "image_url": {"url": encode_image(m)}} for m in msg.images]
        else:
            content = msg.text
        wire.append({"role": msg.role.value, "content": content})
    return {
        "model": cfg.model_name,
        "messages": wire,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    }


def _reply_text(payload: Any) -> str:
    content = payload["choices"][0]["message"]["content"]
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if content is None:
        return ""
    return str(content)


class HttpGateway:
    """OpenAI-compatible ``/chat/completions`` client.

    Transport failures (connection errors, timeouts) are retried with exponential
    backoff; any HTTP response, even an error status, is final.
    """

    def __init__(
        self,
        transport: httpx.BaseTransport | None = None,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        env: Mapping[str, str] | None = None,
    ):
        self._client = httpx.Client(transport=transport)
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._env = os.environ if env is None else env

    def for_episode(self, episode_id: str) -> "HttpGateway":
        return self

    def close(self) -> None:
        self._client.close()

    def _headers(self, cfg: EndpointConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        token = self._env.get(cfg.key_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def send(self, cfg: EndpointConfig, messages: Sequence[ChatMessage]) -> ModelReply:
        if not messages:
            raise ValueError("send needs at least one message")
        body = build_request_body(cfg, messages)
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        timeout = cfg.timeout_ms / 1000
        last: GatewayError | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            start = time.perf_counter()
            try:
                resp = self._client.post(url, json=body, headers=self._headers(cfg), timeout=timeout)
            except httpx.TimeoutException as exc:
                last = GatewayTimeout(f"{cfg.id}: timed out after {timeout}s ({exc})")
            except httpx.TransportError as exc:
                last = TransportError(f"{cfg.id}: {exc}")
            else:
                latency = (time.perf_counter() - start) * 1000
                if resp.status_code >= 400:
                    raise EndpointError(resp.status_code, resp.text)
                try:
                    text = _reply_text(resp.json())
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise EndpointError(resp.status_code, f"malformed completion: {resp.text[:500]}") from exc
                return ModelReply(text, latency, cfg.id)
            log.warning("%s: attempt %d/%d failed: %s", cfg.id, attempt + 1, cfg.max_retries + 1, last)
        assert last is not None
        raise last


_default_gateway: HttpGateway | None = None


def send_chat(cfg: EndpointConfig, messages: Sequence[ChatMessage]) -> ModelReply:
    global _default_gateway
    if _default_gateway is None:
        _default_gateway = HttpGateway()
    return _default_gateway.send(cfg, messages)


ScriptEntry = Union[str, Mapping[str, Any], GatewayError]


@dataclass(frozen=True)
class ScriptedReply:
    text: str
    latency_ms: float = 0.0


@dataclass(frozen=True)
class ScriptedFault:
    tag: str
    message: str = ""

    def to_error(self) -> GatewayError:
        return gateway_error_from_tag(self.tag, self.message)


def _normalize_entry(entry: ScriptEntry) -> ScriptedReply | ScriptedFault:
    if isinstance(entry, (ScriptedReply, ScriptedFault)):
        return entry
    if isinstance(entry, str):
        return ScriptedReply(entry)
    if isinstance(entry, GatewayError):
        return ScriptedFault(entry.tag, str(entry))
    if isinstance(entry, Mapping):
        if "error" in entry:
            gateway_error_from_tag(entry["error"])  # validate the tag eagerly
            return ScriptedFault(entry["error"], entry.get("message", ""))
        if "text" in entry:
            return ScriptedReply(entry["text"], float(entry.get("latency_ms", 0.0)))
    raise ValueError(f"bad script entry {entry!r}")


class ScriptedGateway:
    """Replies from a fixed script keyed by ``(endpoint_id, call_index)``.

    Call counters are per endpoint, so the reply sequence an endpoint sees does
    not depend on how concurrent callers interleave.
    """

    def __init__(self, script: Mapping[tuple[str, int], ScriptEntry]):
        self.script = {key: _normalize_entry(v) for key, v in script.items()}
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[tuple[str, int]] = []

    @classmethod
    def from_sequences(cls, sequences: Mapping[str, Sequence[ScriptEntry]]) -> "ScriptedGateway":
        return cls({(eid, i): e for eid, entries in sequences.items() for i, e in enumerate(entries)})

    def for_episode(self, episode_id: str) -> "ScriptedGateway":
        return self

    def call_count(self, endpoint_id: str) -> int:
        return self._counters.get(endpoint_id, 0)

    def send_to(self, endpoint_id: str, messages: Sequence[ChatMessage]) -> ModelReply:
        with self._lock:
            index = self._counters.get(endpoint_id, 0)
            entry = self.script.get((endpoint_id, index))
            if entry is None:
                raise ScriptExhausted(endpoint_id, index)
            self._counters[endpoint_id] = index + 1
            self.calls.append((endpoint_id, index))
        if isinstance(entry, ScriptedFault):
            raise entry.to_error()
        return ModelReply(entry.text, entry.latency_ms, endpoint_id)

    def send(self, cfg: EndpointConfig, messages: Sequence[ChatMessage]) -> ModelReply:
        if not messages:
            raise ValueError("send needs at least one message")
        return self.send_to(cfg.id, messages)


def scripted_send(script: ScriptedGateway, endpoint_id: str, messages: Sequence[ChatMessage]) -> ModelReply:
    return script.send_to(endpoint_id, messages)


class ScriptLibrary:
    """Per-episode scripts: ``{episode_id: {endpoint_id: [entry, ...]}}``.

    Each episode gets a fresh :class:`ScriptedGateway`, which keeps parallel
    benchmark runs deterministic.
    """

    def __init__(self, episodes: Mapping[str, Mapping[str, Sequence[ScriptEntry]]]):
        self.episodes = {eid: dict(seqs) for eid, seqs in episodes.items()}
        self.issued: dict[str, ScriptedGateway] = {}
        self._lock = threading.Lock()

    def for_episode(self, episode_id: str) -> ScriptedGateway:
        if episode_id not in self.episodes:
            raise ScriptExhausted(f"<episode {episode_id}>", 0)
        gw = ScriptedGateway.from_sequences(self.episodes[episode_id])
        with self._lock:
            self.issued[episode_id] = gw
        return gw

    def send(self, cfg: EndpointConfig, messages: Sequence[ChatMessage]) -> ModelReply:
        raise TypeError("ScriptLibrary needs for_episode() before sending")

    @classmethod
    def load(cls, path: str | Path) -> "ScriptLibrary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "episodes" not in data or not isinstance(data["episodes"], dict):
            raise ValueError(f"{path}: script file needs an 'episodes' object")
        return cls(data["episodes"])

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"episodes": self.episodes}, indent=1) + "\n", encoding="utf-8")
