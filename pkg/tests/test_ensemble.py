import pytest
from hypothesis import given, settings, strategies as st

from conftest import SPECIALISTS, make_cfg, make_task
from gui_ensemble.core import Point, ScreenshotMeta, BBox
from gui_ensemble.ensemble import (
    ElementType,
    Observation,
    Platform,
    ReflectionHint,
    TaskSpec,
    build_observation_prompt,
    observe_all,
    parse_observation,
)
from gui_ensemble.errors import AllSpecialistsFailed
from gui_ensemble.gateway import MessageRole, ModelReply, ScriptedGateway

FHD = ScreenshotMeta(1920, 1080, "s.png")


def _specs(**kw):
    return make_cfg(**kw).specialists


class TestTaskSpec:
    def test_empty_instruction_rejected(self):
        with pytest.raises(ValueError):
            TaskSpec("   ", FHD)

    def test_box_must_fit_screen(self):
        with pytest.raises(ValueError):
            TaskSpec("x", FHD, gt_box=BBox(0, 0, 1921, 10))

    def test_lenient_enum_lookup_and_round_trip(self):
        t = TaskSpec("x", FHD, "desktop", "icon", BBox(1, 2, 3, 4))
        assert t.platform is Platform.DESKTOP and t.element_type is ElementType.ICON
        assert TaskSpec.from_dict(t.to_dict()) == t


class TestPrompts:
    def test_no_hint(self, task):
        msgs = build_observation_prompt(task)
        assert len(msgs) == 2
        assert msgs[0].role is MessageRole.SYSTEM and not msgs[0].images
        assert msgs[1].role is MessageRole.USER and msgs[1].images == (task.screenshot,)
        assert task.instruction in msgs[1].text

    def test_hint_verbatim(self, task):
        msgs = build_observation_prompt(task, ReflectionHint("uground", "focus on the left sidebar"))
        assert "focus on the left sidebar" in msgs[1].text

    def test_prompts_do_not_name_specialists(self, task):
        text = " ".join(m.text for m in build_observation_prompt(task))
        assert not any(s in text for s in SPECIALISTS)


class TestParseObservation:
    def test_examples(self):
        cfg = _specs()[0]
        o = parse_observation(ModelReply("The save icon is at (482, 371).", 0, cfg.id), cfg, FHD, 0)
        assert o.candidate == Point(482, 371) and o.description == "The save icon is at ."
        norm = _specs(normalized=("uitars",))[0]
        o = parse_observation(ModelReply("(500,500)", 0, norm.id), norm, FHD, 0)
        assert o.candidate == Point(960, 540)
        o = parse_observation(ModelReply("element not visible", 0, cfg.id), cfg, FHD, 0)
        assert o.candidate is None and o.description == "element not visible"

    def test_off_screen_becomes_no_candidate(self):
        cfg = _specs()[0]
        o = parse_observation(ModelReply("(5000, 5)", 0, cfg.id), cfg, FHD, 0)
        assert o.candidate is None and o.ok

    @given(st.text(max_size=80))
    def test_raw_text_is_lossless(self, text):
        cfg = _specs()[0]
        assert parse_observation(ModelReply(text, 0, cfg.id), cfg, FHD, 0).raw_text == text

    def test_render(self):
        assert Observation("a", None, "", "", error="Timeout").render() == "SPECIALIST a: UNAVAILABLE"
        assert Observation("a", Point(1, 2), "Save  icon", "x").render() == "SPECIALIST a: Save icon candidate=(1, 2)"
        assert Observation("a", None, "", "").render() == "SPECIALIST a: candidate=none"

    def test_errored_observation_has_no_candidate(self):
        with pytest.raises(ValueError):
            Observation("a", Point(1, 1), "", "", error="Timeout")


class TestObserveAll:
    def test_all_parse(self, task):
        gw = ScriptedGateway.from_sequences({"uitars": ["(10, 10)"], "infigui": ["(12, 11)"],
                                             "uground": ["(400, 400)"]})
        obs = observe_all(task, _specs(), gw)
        assert [o.specialist_id for o in obs] == list(SPECIALISTS)
        assert [o.candidate for o in obs] == [Point(10, 10), Point(12, 11), Point(400, 400)]

    def test_one_timeout(self, task):
        gw = ScriptedGateway.from_sequences({"uitars": ["(10, 10)"], "infigui": [{"error": "Timeout"}],
                                             "uground": ["(400, 400)"]})
        obs = observe_all(task, _specs(), gw)
        assert len(obs) == 3 and obs[1].error == "Timeout" and obs[1].candidate is None

    def test_all_timeout(self, task):
        gw = ScriptedGateway.from_sequences({s: [{"error": "Timeout"}] for s in SPECIALISTS})
        with pytest.raises(AllSpecialistsFailed):
            observe_all(task, _specs(), gw)

    def test_reflection_round_queries_only_hinted(self, task):
        gw = ScriptedGateway.from_sequences({"uitars": ["(10, 10)"], "infigui": ["(12, 11)"],
                                             "uground": ["(400, 400)", "(200, 200)"]})
        calls = []
        histories = {}
        r0 = observe_all(task, _specs(), gw, histories=histories, on_call=calls.append)
        hint = ReflectionHint("uground", "look at the toolbar")
        r1 = observe_all(task, _specs(), gw, [hint], round=1, previous=r0, histories=histories,
                         on_call=calls.append)
        assert [o.round for o in r1] == [0, 0, 1]
        assert r1[2].candidate == Point(200, 200)
        second = calls[-1].messages
        assert second[-1].text.count("look at the toolbar") == 1
        assert len(second) == 4 and not second[-1].images  # own history continued
        assert all("look at the toolbar" not in m.text for c in calls[:3] for m in c.messages)

    def test_reobserve_all(self, task):
        gw = ScriptedGateway.from_sequences({s: ["(1, 1)", "(2, 2)"] for s in SPECIALISTS})
        r0 = observe_all(task, _specs(), gw)
        r1 = observe_all(task, _specs(), gw, [ReflectionHint("uground", "again")], round=1, previous=r0,
                         reobserve="all")
        assert [o.round for o in r1] == [1, 1, 1]

    def test_unknown_hint_rejected(self, task):
        gw = ScriptedGateway.from_sequences({})
        with pytest.raises(ValueError):
            observe_all(task, _specs(), gw, [ReflectionHint("seeclick", "x")], round=1, previous=[])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from(["(5, 5)", "nothing", {"error": "Timeout"}, "[7, 8]"]),
                    min_size=1, max_size=6), st.integers(1, 8))
    def test_order_and_size_follow_config(self, replies, parallelism):
        ids = [f"s{i}" for i in range(len(replies))]
        cfg = make_cfg(ids)
        gw = ScriptedGateway.from_sequences({i: [r] for i, r in zip(ids, replies)})
        task = make_task()
        try:
            obs = observe_all(task, cfg.specialists, gw, parallelism=parallelism)
        except AllSpecialistsFailed:
            assert all(isinstance(r, dict) for r in replies)
            return
        assert [o.specialist_id for o in obs] == ids
        for o, r in zip(obs, replies):
            assert (o.error == "Timeout") == isinstance(r, dict)
