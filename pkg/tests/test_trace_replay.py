import json

import pytest

import synth
from conftest import make_cfg, make_task
from gui_ensemble.errors import ReplayDivergence, TraceIncomplete
from gui_ensemble.gateway import ScriptedGateway
from gui_ensemble.harness import evaluate
from gui_ensemble.orchestrator import GAIR, MM, Mode, run_episode
from gui_ensemble.replay import replay_all, replay_trace
from gui_ensemble.trace import EpisodeTrace, EventKind, TraceEvent, TraceWriter, read_trace

HAPPY = {"uitars": ["(10, 10)"], "infigui": ["(12, 11)"], "uground": ["(400, 400)"],
         "qwen": ["a", "DECISION: CLICK(11, 10)"]}


def _record(tmp_path, seqs=HAPPY, mode=GAIR, eid="ep"):
    path = tmp_path / "trace.jsonl"
    with TraceWriter(path) as w:
        outcome = run_episode(make_task(), make_cfg(), mode, ScriptedGateway.from_sequences(seqs),
                              trace=EpisodeTrace(eid, w))
    return path, outcome


def _lines(path):
    return path.read_text().splitlines()


def test_happy_path_replays(tmp_path):
    path, outcome = _record(tmp_path)
    again = replay_trace(path)
    assert again.final_action == outcome.final_action and again.rounds_used == outcome.rounds_used


def test_truncated_trace(tmp_path):
    path, _ = _record(tmp_path)
    lines = _lines(path)
    path.write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(TraceIncomplete):
        replay_trace(path)


def test_torn_final_line_is_a_valid_prefix(tmp_path):
    path, _ = _record(tmp_path)
    lines = _lines(path)
    path.write_text("\n".join(lines[:-1]) + "\n" + lines[-1][:25])
    events = list(read_trace(path))
    assert len(events) == len(lines) - 1
    with pytest.raises(TraceIncomplete):
        replay_trace(path)


def test_missing_start_or_gap(tmp_path):
    path, _ = _record(tmp_path)
    lines = _lines(path)
    path.write_text("\n".join(lines[:3] + lines[4:]) + "\n")
    with pytest.raises(TraceIncomplete):
        replay_trace(path)


@pytest.mark.parametrize("endpoint", ["uground", "qwen"])
def test_tampered_reply(tmp_path, endpoint):
    path, _ = _record(tmp_path)
    lines = _lines(path)
    for i, line in enumerate(lines):
        ev = json.loads(line)
        if ev["kind"] == "ModelCall" and ev["payload"]["endpoint_id"] == endpoint:
            ev["payload"]["reply"] = "DECISION: CLICK(3, 3)" if endpoint == "qwen" else "(7, 7)"
            lines[i] = json.dumps(ev)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ReplayDivergence):
        replay_trace(path)


def test_tampered_final_action(tmp_path):
    path, _ = _record(tmp_path)
    lines = _lines(path)
    ev = json.loads(lines[-1])
    ev["payload"]["point"] = "(1, 1)"
    lines[-1] = json.dumps(ev)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ReplayDivergence):
        replay_trace(path)


def test_failed_episode_replays_to_same_error(tmp_path):
    seqs = {s: [{"error": "Timeout"}] for s in synth.SPECS}
    path = tmp_path / "trace.jsonl"
    with TraceWriter(path) as w, pytest.raises(Exception):
        run_episode(make_task(), make_cfg(), GAIR, ScriptedGateway.from_sequences(seqs),
                    trace=EpisodeTrace("bad", w))
    result = replay_all(path)["bad"]
    assert type(result).__name__ == "AllSpecialistsFailed"


def test_events_are_sequenced_and_carry_requests(tmp_path):
    path, _ = _record(tmp_path)
    events = list(read_trace(path))
    assert [e.seq for e in events] == list(range(len(events)))
    assert events[0].payload["from"] is None and events[0].payload["to"] == "start"
    for e in events:
        if e.kind is EventKind.MODEL_CALL:
            assert e.payload["request"] and e.payload["reply"] is not None
    assert "authorization" not in path.read_text().lower()


def test_stable_drops_timing():
    e = TraceEvent("x", 0, EventKind.MODEL_CALL, {"latency_ms": 5, "reply": "r"}, ts=123.0)
    assert e.stable() == {"episode_id": "x", "seq": 0, "kind": "ModelCall", "payload": {"reply": "r"}}


@pytest.mark.parametrize("mode", [GAIR, MM, Mode.parse("SM:infigui")], ids=str)
def test_model_call_audit(tmp_path, mode):
    """Every gateway call issued during a bench shows up as exactly one ModelCall event."""
    designs = synth.mixed_designs(20, seed=3)
    lib = synth.library(designs)
    path = tmp_path / "t.jsonl"
    with TraceWriter(path, fresh=True) as w:
        evaluate([synth.record(d) for d in designs], mode, make_cfg(), lib, writer=w)
    issued = sum(len(gw.calls) for gw in lib.issued.values())
    recorded = sum(e.kind is EventKind.MODEL_CALL for e in read_trace(path))
    assert issued == recorded > 0
    assert all(not isinstance(r, Exception) for r in replay_all(path).values())


def test_fresh_writer_truncates(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text("old\n")
    with TraceWriter(path, fresh=True):
        pass
    assert path.read_text() == ""
