"""Re-run a recorded episode against its own recorded replies and check nothing changed."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .ensemble import TaskSpec
from .errors import GuiEnsembleError, ReplayDivergence, ScriptExhausted, TraceIncomplete
from .gateway import ScriptedGateway
from .orchestrator import EpisodeOutcome, Mode, run_episode
from .trace import EpisodeTrace, EventKind, TraceEvent, group_by_episode, read_trace


def script_from_events(events: Sequence[TraceEvent]) -> ScriptedGateway:
    sequences: dict[str, list] = {}
    for e in events:
        if e.kind is not EventKind.MODEL_CALL:
            continue
        p = e.payload
        if p.get("error"):
            entry = {"error": p["error"], "message": p.get("error_message") or ""}
        else:
            entry = {"text": p["reply"], "latency_ms": p.get("latency_ms", 0.0)}
        sequences.setdefault(p["endpoint_id"], []).append(entry)
    return ScriptedGateway.from_sequences(sequences)


def _check_complete(episode_id: str, events: Sequence[TraceEvent]) -> None:
    if not events:
        raise TraceIncomplete(f"episode {episode_id!r} has no events")
    if [e.seq for e in events] != list(range(len(events))):
        raise TraceIncomplete(f"episode {episode_id!r} has gaps in its sequence numbers")
    first = events[0]
    if first.kind is not EventKind.STATE_TRANSITION or first.payload.get("to") != "start":
        raise TraceIncomplete(f"episode {episode_id!r} does not begin with its start record")
    if events[-1].kind is not EventKind.FINAL_ACTION:
        raise TraceIncomplete(f"episode {episode_id!r} does not end in a FinalAction event")


def replay_events(episode_id: str, events: Sequence[TraceEvent]) -> EpisodeOutcome:
    _check_complete(episode_id, events)
    start = events[0].payload
    cfg = RunConfig.from_dict(start["config"])
    task = TaskSpec.from_dict(start["task"])
    mode = Mode.parse(start["mode"])
    trace = EpisodeTrace(episode_id)
    failure: Exception | None = None
    outcome = None
    try:
        outcome = run_episode(task, cfg, mode, script_from_events(events), trace=trace)
    except ScriptExhausted as exc:
        raise ReplayDivergence(f"episode {episode_id!r}: replay asked for an unrecorded call ({exc})") from exc
    except GuiEnsembleError as exc:
        failure = exc

    recorded = [e.stable() for e in events]
    replayed = json.loads(json.dumps(trace.stable()))
    for i, (a, b) in enumerate(zip(recorded, replayed)):
        if a != b:
            raise ReplayDivergence(f"episode {episode_id!r}: event {i} differs on replay "
                                   f"(recorded {a['kind']}, replayed {b['kind']})")
    if len(recorded) != len(replayed):
        raise ReplayDivergence(f"episode {episode_id!r}: {len(recorded)} events recorded, "
                               f"{len(replayed)} on replay")
    if failure is not None:
        raise failure
    return outcome


def replay_all(trace_path: str | Path) -> dict[str, EpisodeOutcome | Exception]:
    """Replay every episode in a trace file; recorded failures come back as the reproduced exception."""
    out: dict[str, EpisodeOutcome | Exception] = {}
    for eid, events in group_by_episode(list(read_trace(trace_path))).items():
        try:
            out[eid] = replay_events(eid, events)
        except (ReplayDivergence, TraceIncomplete):
            raise
        except GuiEnsembleError as exc:
            out[eid] = exc
    return out


def replay_trace(trace_path: str | Path, episode_id: str | None = None) -> EpisodeOutcome:
    episodes = group_by_episode(list(read_trace(trace_path)))
    if episode_id is None:
        if len(episodes) != 1:
            raise ValueError(f"{trace_path} holds {len(episodes)} episodes; name one")
        episode_id = next(iter(episodes))
    if episode_id not in episodes:
        raise TraceIncomplete(f"episode {episode_id!r} not in {trace_path}")
    return replay_events(episode_id, episodes[episode_id])
