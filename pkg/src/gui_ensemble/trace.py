"""Append-only JSONL trace of model calls, parse results and state transitions."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Sequence

from .errors import GatewayError
from .gateway import ChatMessage, EndpointConfig, Gateway, ModelReply


class EventKind(str, Enum):
    MODEL_CALL = "ModelCall"
    PARSE_RESULT = "ParseResult"
    STATE_TRANSITION = "StateTransition"
    FINAL_ACTION = "FinalAction"


# Fields that legitimately differ between two runs of the same script.
VOLATILE_KEYS = frozenset({"ts", "latency_ms"})


@dataclass
class TraceEvent:
    episode_id: str
    seq: int
    kind: EventKind
    payload: dict
    ts: float = field(default_factory=time.time)

    def to_dict(self) -> dict:
        return {"episode_id": self.episode_id, "seq": self.seq, "kind": self.kind.value,
                "payload": self.payload, "ts": self.ts}

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        return cls(d["episode_id"], int(d["seq"]), EventKind(d["kind"]), d["payload"], d.get("ts", 0.0))

    def stable(self) -> dict:
        """The event without timing fields, for run-to-run comparison."""
        return _drop_volatile(self.to_dict())


def _drop_volatile(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _drop_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [_drop_volatile(v) for v in obj]
    return obj


class TraceWriter:
    """Thread-safe JSONL sink shared by every episode of a run.

    Each event is written and flushed as one line, so a crashed run leaves a
    readable prefix.
    """

    def __init__(self, path: str | Path | None = None, fresh: bool = False):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("w" if fresh else "a", encoding="utf-8")

    def append(self, event: TraceEvent) -> None:
        if self._fh is None:
            return
        line = json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class EpisodeTrace:
    """Per-episode recorder; keeps events in memory and forwards them to a writer."""

    def __init__(self, episode_id: str, writer: TraceWriter | None = None):
        self.episode_id = episode_id
        self.writer = writer
        self.events: list[TraceEvent] = []
        self.total_latency_ms = 0.0

    def emit(self, kind: EventKind, payload: dict) -> TraceEvent:
        event = TraceEvent(self.episode_id, len(self.events), kind, payload)
        self.events.append(event)
        if self.writer is not None:
            self.writer.append(event)
        return event

    def transition(self, src: str | None, dst: str, **extra) -> None:
        self.emit(EventKind.STATE_TRANSITION, {"from": src, "to": dst, **extra})

    def parse_result(self, stage: str, **payload) -> None:
        self.emit(EventKind.PARSE_RESULT, {"stage": stage, **payload})

    def record_call(
        self,
        cfg: EndpointConfig,
        messages: Sequence[ChatMessage],
        reply: ModelReply | None,
        error: GatewayError | None,
        round: int,
        purpose: str,
    ) -> None:
        if reply is not None:
            self.total_latency_ms += reply.latency_ms
        self.emit(EventKind.MODEL_CALL, {
            "endpoint_id": cfg.id,
            "role": cfg.role.value,
            "round": round,
            "purpose": purpose,
            "request": [m.to_dict() for m in messages],
            "reply": reply.text if reply is not None else None,
            "latency_ms": reply.latency_ms if reply is not None else 0.0,
            "error": error.tag if error is not None else None,
            "error_message": str(error) if error is not None else None,
        })

    def call(self, gw: Gateway, cfg: EndpointConfig, messages: Sequence[ChatMessage], *,
             round: int, purpose: str) -> ModelReply:
        """Send through ``gw`` and record the call; gateway errors are recorded then re-raised."""
        try:
            reply = gw.send(cfg, messages)
        except GatewayError as exc:
            self.record_call(cfg, messages, None, exc, round, purpose)
            raise
        self.record_call(cfg, messages, reply, None, round, purpose)
        return reply

    def model_calls(self) -> list[TraceEvent]:
        return [e for e in self.events if e.kind is EventKind.MODEL_CALL]

    def stable(self) -> list[dict]:
        return [e.stable() for e in self.events]


def read_trace(path: str | Path) -> Iterator[TraceEvent]:
    """Yield events in file order. A torn final line (crash mid-write) is skipped."""
    with Path(path).open(encoding="utf-8") as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            yield TraceEvent.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError):
            if i == len(lines) - 1:
                return
            raise


def group_by_episode(events: Sequence[TraceEvent]) -> dict[str, list[TraceEvent]]:
    out: dict[str, list[TraceEvent]] = {}
    for e in events:
        out.setdefault(e.episode_id, []).append(e)
    for evs in out.values():
        evs.sort(key=lambda e: e.seq)
    return out
