from __future__ import annotations

import pytest

from gui_ensemble.config import RunConfig
from gui_ensemble.core import NORMALIZED_1000, ScreenshotMeta
from gui_ensemble.ensemble import TaskSpec
from gui_ensemble.gateway import EndpointConfig, Role
from gui_ensemble.orchestrator import EpisodeBudget, Fallback

SPECIALISTS = ("uitars", "infigui", "uground")
GENERAL = "qwen"


def make_cfg(specialists=SPECIALISTS, *, normalized=(), max_rounds=2,
             fallback=Fallback.GENERAL_BEST_GUESS, **kw) -> RunConfig:
    eps = [EndpointConfig(GENERAL, "http://general.invalid/v1", "Qwen2.5-VL-7B-Instruct", Role.GENERAL)]
    for sid in specialists:
        conv = NORMALIZED_1000 if sid in normalized else EndpointConfig.__dataclass_fields__[
            "coord_convention"].default
        eps.append(EndpointConfig(sid, f"http://{sid}.invalid/v1", sid, Role.SPECIALIST, coord_convention=conv))
    return RunConfig(eps, EpisodeBudget(max_rounds, fallback), **kw)


def make_task(instruction="click the save icon", width=1920, height=1080, **kw) -> TaskSpec:
    return TaskSpec(instruction, ScreenshotMeta(width, height, "screens/s.png"), **kw)


@pytest.fixture
def cfg():
    return make_cfg()


@pytest.fixture
def task():
    return make_task()


def pytest_addoption(parser):
    parser.addoption("--live-config", default=None,
                     help="config JSON with real endpoints; enables the live smoke test")


_CRITERIA: dict[str, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        cid, title = marker.args
        entry = _CRITERIA.setdefault(cid, {"title": title, "outcomes": []})
        entry["outcomes"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c[2:])):
        entry = _CRITERIA[cid]
        outs = entry["outcomes"]
        if any(o == "failed" for o in outs):
            verdict = "FAIL"
        elif all(o == "skipped" for o in outs):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"{verdict:4}  {cid}  {entry['title']}  ({len(outs)} checks)")
