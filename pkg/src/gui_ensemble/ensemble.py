"""Observation stage: every specialist looks at the task and reports a candidate."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

from .core import BBox, Point, ScreenshotMeta, format_point, parse_point, strip_coordinates
from .errors import AllSpecialistsFailed, GatewayError, NoCoordinateFound, OutOfRange
from .gateway import ChatMessage, EndpointConfig, Gateway, ModelReply, assistant, system, user
from .prompts import Templates, default_templates

log = logging.getLogger(__name__)


class Platform(str, Enum):
    WEB = "Web"
    DESKTOP = "Desktop"
    MOBILE = "Mobile"
    UNKNOWN = "Unknown"


class ElementType(str, Enum):
    BUTTON = "Button"
    ICON = "Icon"
    DROPDOWN = "Dropdown"
    INPUT = "Input"
    TOGGLE = "Toggle"
    TEXT = "Text"
    OTHER = "Other"


def _enum_lookup(enum_cls, value):
    if value is None or isinstance(value, enum_cls):
        return value
    for member in enum_cls:
        if member.value.lower() == str(value).strip().lower():
            return member
    raise ValueError(f"{value!r} is not a valid {enum_cls.__name__}")


@dataclass(frozen=True)
class TaskSpec:
    instruction: str
    screenshot: ScreenshotMeta
    platform: Platform = Platform.UNKNOWN
    element_type: Optional[ElementType] = None
    gt_box: Optional[BBox] = None

    def __post_init__(self):
        if not self.instruction or not self.instruction.strip():
            raise ValueError("task instruction must be non-empty")
        object.__setattr__(self, "platform", _enum_lookup(Platform, self.platform))
        object.__setattr__(self, "element_type", _enum_lookup(ElementType, self.element_type))
        b = self.gt_box
        if b is not None and (b.x2 > self.screenshot.width or b.y2 > self.screenshot.height):
            raise ValueError(
                f"gt box {b.to_list()} exceeds {self.screenshot.width}x{self.screenshot.height} screenshot"
            )

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "screenshot": self.screenshot.to_dict(),
            "platform": self.platform.value,
            "element_type": self.element_type.value if self.element_type else None,
            "gt_box": self.gt_box.to_list() if self.gt_box else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            d["instruction"],
            ScreenshotMeta.from_dict(d["screenshot"]),
            d.get("platform", "Unknown"),
            d.get("element_type"),
            BBox.from_list(d["gt_box"]) if d.get("gt_box") else None,
        )


@dataclass(frozen=True)
class ReflectionHint:
    specialist_id: str
    instruction: str

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("hint instruction must be non-empty")

    def to_dict(self) -> dict:
        return {"specialist_id": self.specialist_id, "instruction": self.instruction}


@dataclass(frozen=True)
class Observation:
    specialist_id: str
    candidate: Optional[Point]
    description: str
    raw_text: str
    round: int = 0
    error: Optional[str] = None

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if self.error is not None and self.candidate is not None:
            raise ValueError("an errored observation cannot carry a candidate")

    @property
    def ok(self) -> bool:
        return self.error is None

    def render(self) -> str:
        """One report line as shown to the general model."""
        if self.error is not None:
            return f"SPECIALIST {self.specialist_id}: UNAVAILABLE"
        cand = format_point(self.candidate) if self.candidate is not None else "none"
        desc = " ".join(self.description.split())
        return f"SPECIALIST {self.specialist_id}: {desc + ' ' if desc else ''}candidate={cand}"

    def to_dict(self) -> dict:
        return {
            "specialist_id": self.specialist_id,
            "candidate": self.candidate.to_list() if self.candidate is not None else None,
            "description": self.description,
            "raw_text": self.raw_text,
            "round": self.round,
            "error": self.error,
        }


def build_observation_prompt(
    task: TaskSpec, hint: ReflectionHint | None = None, templates: Templates | None = None
) -> list[ChatMessage]:
    t = templates or default_templates()
    if hint is None:
        text = t.render("specialist_user", instruction=task.instruction)
    else:
        text = t.render("specialist_hint", hint=hint.instruction, instruction=task.instruction)
    return [system(t.render("specialist_system")), user(text, [task.screenshot])]


def continue_observation_prompt(
    history: Sequence[ChatMessage],
    task: TaskSpec,
    hint: ReflectionHint | None,
    templates: Templates | None = None,
) -> list[ChatMessage]:
    """Extend a specialist's own conversation for a reflection round."""
    t = templates or default_templates()
    if hint is None:
        text = t.render("specialist_recheck", instruction=task.instruction)
    else:
        text = t.render("specialist_hint", hint=hint.instruction, instruction=task.instruction)
    return [*history, user(text)]


def parse_observation(reply: ModelReply, cfg: EndpointConfig, meta: ScreenshotMeta, round: int) -> Observation:
    try:
        candidate = parse_point(reply.text, cfg.coord_convention, meta)
    except (NoCoordinateFound, OutOfRange) as exc:
        log.debug("%s round %d: no usable coordinate (%s)", cfg.id, round, exc)
        candidate = None
    return Observation(cfg.id, candidate, strip_coordinates(reply.text), reply.text, round)


@dataclass
class CallRecord:
    """One specialist call from a fan-out, kept for tracing."""

    cfg: EndpointConfig
    messages: list[ChatMessage]
    reply: ModelReply | None
    error: GatewayError | None
    round: int


OnCall = Callable[[CallRecord], None]


def observe_all(
    task: TaskSpec,
    specialists: Sequence[EndpointConfig],
    gw: Gateway,
    hints: Sequence[ReflectionHint] | None = None,
    *,
    round: int = 0,
    previous: Sequence[Observation] | None = None,
    histories: dict[str, list[ChatMessage]] | None = None,
    reobserve: str = "hinted",
    parallelism: int = 4,
    templates: Templates | None = None,
    on_call: OnCall | None = None,
) -> list[Observation]:
    """Query specialists concurrently and return one observation per specialist, in config order.

    Round 0 queries everyone. In later rounds only hinted specialists are
    re-queried (``reobserve="all"`` re-queries everyone); the rest keep their
    entry from ``previous``. ``histories`` maps specialist id to its running
    conversation and is updated in place after each successful reply.
    """
    if not specialists:
        raise ValueError("observe_all needs at least one specialist")
    ids = [s.id for s in specialists]
    by_id = {h.specialist_id: h for h in hints or ()}
    unknown = set(by_id) - set(ids)
    if unknown:
        raise ValueError(f"hints for unconfigured specialists: {sorted(unknown)}")
    if round > 0 and previous is None:
        raise ValueError("reflection rounds need the previous observations")
    prev = {o.specialist_id: o for o in previous or ()}
    histories = {} if histories is None else histories

    targets: list[tuple[EndpointConfig, list[ChatMessage]]] = []
    for cfg in specialists:
        hint = by_id.get(cfg.id)
        if round > 0 and hint is None and reobserve != "all":
            continue
        if round > 0 and cfg.id in histories:
            msgs = continue_observation_prompt(histories[cfg.id], task, hint, templates)
        else:
            msgs = build_observation_prompt(task, hint, templates)
        targets.append((cfg, msgs))

    def call(item):
        cfg, msgs = item
        try:
            return gw.send(cfg, msgs), None
        except GatewayError as exc:
            return None, exc

    if len(targets) > 1 and parallelism > 1:
        with ThreadPoolExecutor(max_workers=min(parallelism, len(targets))) as pool:
            outcomes = list(pool.map(call, targets))
    else:
        outcomes = [call(t) for t in targets]

    fresh: dict[str, Observation] = {}
    for (cfg, msgs), (reply, err) in zip(targets, outcomes):
        if on_call is not None:
            on_call(CallRecord(cfg, msgs, reply, err, round))
        if err is not None:
            log.warning("specialist %s failed in round %d: %s", cfg.id, round, err)
            fresh[cfg.id] = Observation(cfg.id, None, "", "", round, error=err.tag)
            continue
        fresh[cfg.id] = parse_observation(reply, cfg, task.screenshot, round)
        histories[cfg.id] = [*msgs, assistant(reply.text)]

    result = [fresh[i] if i in fresh else prev[i] for i in ids]
    if all(not o.ok for o in result):
        raise AllSpecialistsFailed(f"all {len(result)} specialists failed in round {round}")
    return result
