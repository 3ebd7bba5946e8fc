"""Joint reasoning over specialist reports, the act/reflect decision, and episode control.

An episode runs ``Observe -> Reason -> (Act | Reflect -> Observe -> Reason ...)``
with the number of reflection rounds capped by :class:`EpisodeBudget`.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional, Sequence

from .core import ABSOLUTE, CoordConvention, GuiAction, Point, ScreenshotMeta, format_point, to_pixels
from .ensemble import Observation, ReflectionHint, TaskSpec, build_observation_prompt, observe_all, parse_observation
from .errors import (
    AllSpecialistsFailed,
    DecisionParseError,
    EpisodeFailed,
    GatewayError,
    InvalidGeometry,
    OutOfRange,
)
from .gateway import ChatMessage, Gateway, assistant, system, user
from .prompts import Templates
from .trace import EpisodeTrace, EventKind

if TYPE_CHECKING:
    from .config import RunConfig

log = logging.getLogger(__name__)


class DecisionKind(str, Enum):
    ACT = "Act"
    REFLECT = "Reflect"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    action: Optional[GuiAction] = None
    hints: tuple[ReflectionHint, ...] = ()
    rationale: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hints", tuple(self.hints))
        if self.kind is DecisionKind.ACT:
            if self.action is None or self.hints:
                raise ValueError("an Act decision carries an action and no hints")
        else:
            if not self.hints or self.action is not None:
                raise ValueError("a Reflect decision carries hints and no action")
            ids = [h.specialist_id for h in self.hints]
            if len(set(ids)) != len(ids):
                raise ValueError("at most one hint per specialist")

    @classmethod
    def act(cls, point: Point, rationale: str = "") -> "Decision":
        return cls(DecisionKind.ACT, GuiAction.click(point), (), rationale)

    @classmethod
    def reflect(cls, hints: Sequence[ReflectionHint], rationale: str = "") -> "Decision":
        return cls(DecisionKind.REFLECT, None, tuple(hints), rationale)


class Fallback(str, Enum):
    GENERAL_BEST_GUESS = "GeneralBestGuess"
    FIRST_SPECIALIST_CANDIDATE = "FirstSpecialistCandidate"


@dataclass(frozen=True)
class EpisodeBudget:
    max_reflection_rounds: int = 2
    fallback: Fallback = Fallback.GENERAL_BEST_GUESS

    def __post_init__(self):
        object.__setattr__(self, "fallback", Fallback(self.fallback))
        if self.max_reflection_rounds < 0:
            raise ValueError("max_reflection_rounds must be >= 0")


class ModeKind(str, Enum):
    SM = "SM"
    MM = "MM"
    GAIR = "GAIR"


@dataclass(frozen=True)
class Mode:
    kind: ModeKind
    specialist_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModeKind(self.kind))
        if (self.kind is ModeKind.SM) != (self.specialist_id is not None):
            raise ValueError("SM mode names exactly one specialist; MM and GAIR name none")

    @classmethod
    def parse(cls, text: str) -> "Mode":
        """``"SM:<specialist_id>"``, ``"MM"`` or ``"GAIR"``."""
        head, _, tail = text.strip().partition(":")
        kind = ModeKind(head.strip().upper())
        return cls(kind, tail.strip() or None) if kind is ModeKind.SM else cls(kind)

    def __str__(self) -> str:
        return f"SM:{self.specialist_id}" if self.kind is ModeKind.SM else self.kind.value


MM = Mode(ModeKind.MM)
GAIR = Mode(ModeKind.GAIR)


@dataclass(frozen=True)
class EpisodeOutcome:
    final_action: GuiAction
    rounds_used: int
    mode: Mode
    trace_ref: str
    initial_observations: tuple[Observation, ...] = ()
    latency_ms: float = 0.0


# decision grammar

_NUM = r"([-+]?\d+(?:\.\d+)?)"
_CLICK = re.compile(rf"DECISION\s*:\s*CLICK\s*\(\s*{_NUM}\s*,\s*{_NUM}\s*\)", re.IGNORECASE)
_REFLECT = re.compile(r"REFLECT\s*:", re.IGNORECASE)
_HINT_LINE = re.compile(r"^\s*(?:[-*]\s*)?(?:SPECIALIST\s+)?([A-Za-z0-9_.\-]+)\s*:\s*(.*?)\s*$", re.IGNORECASE)


def format_decision(d: Decision) -> str:
    """Canonical rendering; ``parse_decision`` inverts it."""
    head = f"{d.rationale}\n" if d.rationale else ""
    if d.kind is DecisionKind.ACT:
        p = d.action.point
        return f"{head}DECISION: CLICK({p.x}, {p.y})"
    lines = "\n".join(f"{h.specialist_id}: {h.instruction}" for h in d.hints)
    return f"{head}REFLECT:\n{lines}"


def parse_decision(
    text: str,
    meta: ScreenshotMeta,
    specialists: Sequence[str],
    conv: CoordConvention = ABSOLUTE,
) -> Decision:
    """Read the general model's reply. The last ``DECISION: CLICK`` or ``REFLECT:`` keyword wins."""
    candidates = [m for m in _CLICK.finditer(text)] + [m for m in _REFLECT.finditer(text)]
    if not candidates:
        raise DecisionParseError("reply has neither 'DECISION: CLICK(x, y)' nor 'REFLECT:'")
    m = max(candidates, key=lambda m: m.start())
    rationale = text[: m.start()].strip()

    if m.re is _CLICK:
        x, y = float(m.group(1)), float(m.group(2))
        try:
            point = to_pixels(Point(x, y), conv, meta)
            action = GuiAction.click(point, meta)
        except (InvalidGeometry, OutOfRange) as exc:
            raise DecisionParseError(f"click target rejected: {exc}") from exc
        return Decision(DecisionKind.ACT, action, (), rationale)

    known = set(specialists)
    merged: dict[str, list[str]] = {}
    for line in text[m.end():].splitlines():
        hm = _HINT_LINE.match(line)
        if not hm or not hm.group(2):
            continue
        sid, instruction = hm.group(1), hm.group(2)
        if sid not in known:
            log.warning("REFLECT names unknown specialist %r; dropping its hint", sid)
            continue
        merged.setdefault(sid, []).append(instruction)
    if not merged:
        raise DecisionParseError("REFLECT block names no configured specialist")
    hints = tuple(ReflectionHint(sid, " ".join(parts)) for sid, parts in merged.items())
    return Decision(DecisionKind.REFLECT, None, hints, rationale)


def build_reasoning_dialogue(
    task: TaskSpec,
    observations: Sequence[Observation],
    prior_turns: Sequence[ChatMessage],
    *,
    round: int = 0,
    attach_screenshot: bool = True,
    templates: Templates | None = None,
) -> list[ChatMessage]:
    """Append the analysis request for one round to the running dialogue.

    The screenshot rides along with the first round's request only; later
    rounds continue the same conversation.
    """
    t = templates or Templates.load()
    usable = [o for o in observations if o.ok]
    if not usable:
        raise ValueError("reasoning needs at least one available specialist report")
    reports = "\n".join(o.render() for o in observations)
    text = t.render(
        "general_analysis",
        instruction=task.instruction,
        width=task.screenshot.width,
        height=task.screenshot.height,
        round=round,
        reports=reports,
    )
    msgs = list(prior_turns)
    if not msgs:
        msgs.append(system(t.render("general_system")))
    images = [task.screenshot] if attach_screenshot and not prior_turns else []
    msgs.append(user(text, images))
    return msgs


def request_decision(dialogue: Sequence[ChatMessage], analysis: str, templates: Templates) -> list[ChatMessage]:
    return [*dialogue, assistant(analysis), user(templates.render("general_decision"))]


class _Episode:
    def __init__(self, task: TaskSpec, cfg: "RunConfig", mode: Mode, gw: Gateway,
                 trace: EpisodeTrace, templates: Templates):
        self.task = task
        self.cfg = cfg
        self.mode = mode
        self.gw = gw
        self.trace = trace
        self.t = templates
        self.general = cfg.general
        self.specialists = cfg.specialists
        self.dialogue: list[ChatMessage] = []
        self.histories: dict[str, list[ChatMessage]] = {}
        self.rounds: list[list[Observation]] = []
        self.rounds_used = 0
        self.general_down = False

    # observation ---------------------------------------------------------

    def observe(self, round: int, hints: Sequence[ReflectionHint] = ()) -> list[Observation]:
        obs = observe_all(
            self.task,
            self.specialists,
            self.gw,
            hints,
            round=round,
            previous=self.rounds[-1] if self.rounds else None,
            histories=self.histories,
            reobserve=self.cfg.reflect_scope,
            parallelism=self.cfg.parallelism,
            templates=self.t,
            on_call=lambda rec: self.trace.record_call(
                rec.cfg, rec.messages, rec.reply, rec.error, rec.round, "observe"),
        )
        self.trace.parse_result("observation", round=round,
                                observations=[o.to_dict() for o in obs if o.round == round])
        self.rounds.append(obs)
        return obs

    # reasoning -----------------------------------------------------------

    def _ask_general(self, msgs: list[ChatMessage], round: int, purpose: str) -> str:
        reply = self.trace.call(self.gw, self.general, msgs, round=round, purpose=purpose)
        self.dialogue = [*msgs, assistant(reply.text)]
        return reply.text

    def _parse(self, text: str, round: int) -> Decision:
        try:
            d = parse_decision(text, self.task.screenshot, [s.id for s in self.specialists],
                               self.general.coord_convention)
        except DecisionParseError as exc:
            self.trace.parse_result("decision", round=round, ok=False, error=str(exc))
            raise
        self.trace.parse_result("decision", round=round, ok=True, decision=format_decision(d))
        return d

    def reason(self, round: int, observations: list[Observation]) -> Decision | None:
        """One reasoning round; ``None`` when no usable decision came back."""
        self.rounds_used += 1
        msgs = build_reasoning_dialogue(
            self.task, observations, self.dialogue, round=round,
            attach_screenshot=self.cfg.attach_screenshot_to_general, templates=self.t)
        try:
            analysis = self._ask_general(msgs, round, "analysis")
            text = self._ask_general(request_decision(msgs, analysis, self.t), round, "decision")
            try:
                return self._parse(text, round)
            except DecisionParseError as exc:
                self.trace.transition("reason", "reask", round=round)
                retry = [*self.dialogue, user(self.t.render("general_reask", error=str(exc)))]
                text = self._ask_general(retry, round, "reask")
                try:
                    return self._parse(text, round)
                except DecisionParseError:
                    return None
        except GatewayError as exc:
            log.warning("general model unavailable in round %d: %s", round, exc)
            self.general_down = True
            return None

    # fallback ------------------------------------------------------------

    def fallback(self, round: int) -> GuiAction:
        """Best guess from the general model if configured, else the earliest specialist candidate."""
        policy = self.cfg.budget.fallback
        self.trace.transition("reason", "fallback", policy=policy.value, round=round)
        if policy is Fallback.GENERAL_BEST_GUESS:
            if not self.general_down:
                try:
                    text = self._ask_general([*self.dialogue, user(self.t.render("general_fallback"))],
                                             round, "fallback")
                    d = self._parse(text, round)
                    if d.kind is DecisionKind.ACT:
                        return d.action
                except (GatewayError, DecisionParseError) as exc:
                    log.warning("best-guess fallback failed: %s", exc)
            self.trace.transition("fallback", "fallback",
                                  policy=Fallback.FIRST_SPECIALIST_CANDIDATE.value, round=round)
        for obs in self.rounds:
            for o in obs:
                if o.candidate is not None:
                    return GuiAction.click(o.candidate, self.task.screenshot)
        raise EpisodeFailed("no decision and no specialist candidate", self.rounds[0] if self.rounds else ())

    def run(self) -> GuiAction:
        self.trace.transition("start", "observe", round=0)
        observations = self.observe(0)
        reflections = 0
        while True:
            self.trace.transition("observe", "reason", round=reflections)
            decision = self.reason(reflections, observations)
            if decision is not None and decision.kind is DecisionKind.ACT:
                self.trace.transition("reason", "act", round=reflections)
                return decision.action
            can_reflect = (
                decision is not None
                and self.mode.kind is ModeKind.GAIR
                and reflections < self.cfg.budget.max_reflection_rounds
            )
            if not can_reflect:
                return self.fallback(reflections)
            reflections += 1
            self.trace.transition("reason", "reflect", round=reflections,
                                  hints=[h.to_dict() for h in decision.hints])
            self.trace.transition("reflect", "observe", round=reflections)
            try:
                observations = self.observe(reflections, decision.hints)
            except AllSpecialistsFailed as exc:
                log.warning("reflection round %d produced nothing: %s", reflections, exc)
                return self.fallback(reflections)


def _run_single(task: TaskSpec, cfg: "RunConfig", mode: Mode, gw: Gateway,
                trace: EpisodeTrace, templates: Templates) -> tuple[GuiAction, list[Observation]]:
    spec = cfg.endpoint(mode.specialist_id)
    trace.transition("start", "observe", round=0)
    msgs = build_observation_prompt(task, None, templates)
    first: Observation | None = None
    for attempt in range(2):
        try:
            reply = trace.call(gw, spec, msgs, round=0, purpose="observe" if attempt == 0 else "retry")
        except GatewayError as exc:
            obs = Observation(spec.id, None, "", "", 0, error=exc.tag)
        else:
            obs = parse_observation(reply, spec, task.screenshot, 0)
        trace.parse_result("observation", round=0, attempt=attempt, observations=[obs.to_dict()])
        first = first or obs
        if obs.candidate is not None:
            trace.transition("observe", "act", round=0)
            return GuiAction.click(obs.candidate, task.screenshot), [first]
        if attempt == 0:
            if obs.ok:
                msgs = [*msgs, assistant(obs.raw_text), user(templates.render("specialist_retry"))]
            trace.transition("observe", "retry", round=0)
    raise EpisodeFailed(f"specialist {spec.id} gave no usable coordinate after one retry", [first])


def run_episode(
    task: TaskSpec,
    cfg: "RunConfig",
    mode: Mode | None,
    gw: Gateway,
    *,
    trace: EpisodeTrace | None = None,
    episode_id: str = "episode-0",
    templates: Templates | None = None,
) -> EpisodeOutcome:
    """Run one grounding episode and return its single final action.

    ``gw`` is used as given; callers with per-episode scripts pass
    ``library.for_episode(id)``. Every call and transition lands in ``trace``
    before this returns, including the terminal FinalAction event on failure.
    """
    mode = mode or cfg.mode
    if mode.kind is ModeKind.SM:
        cfg.endpoint(mode.specialist_id)  # raises ConfigError if unknown
    trace = trace or EpisodeTrace(episode_id)
    templates = templates or cfg.templates()
    trace.emit(EventKind.STATE_TRANSITION, {
        "from": None, "to": "start", "mode": str(mode),
        "task": task.to_dict(), "config": cfg.to_dict(),
    })
    try:
        if mode.kind is ModeKind.SM:
            action, initial = _run_single(task, cfg, mode, gw, trace, templates)
            rounds_used = 1
        else:
            ep = _Episode(task, cfg, mode, gw, trace, templates)
            action = ep.run()
            initial = ep.rounds[0]
            rounds_used = ep.rounds_used
    except Exception as exc:
        trace.emit(EventKind.FINAL_ACTION, {"action": None, "error": type(exc).__name__, "message": str(exc)})
        raise
    trace.emit(EventKind.FINAL_ACTION, {"action": action.to_dict(), "rounds_used": rounds_used,
                                        "point": format_point(action.point)})
    return EpisodeOutcome(action, rounds_used, mode, trace.episode_id, tuple(initial), trace.total_latency_ms)
