"""Synthetic scripted benchmarks with outcomes known by construction.

Each ``Design`` fixes, per record, which specialists are right in round 0,
what the general model does with the reports (pick one, or send one back
for a second look) and whether that second look lands inside the box. The
``expected_*`` helpers derive outcomes from a design alone by walking the
state machine by hand and testing membership on the integer pixel grid, so
they share no code with the package's hit test or orchestrator.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from gui_ensemble.core import BBox, ScreenshotMeta
from gui_ensemble.ensemble import ElementType, Platform, TaskSpec
from gui_ensemble.gateway import ScriptLibrary
from gui_ensemble.harness import DatasetRecord, Source

W, H = 1000, 800
SPECS = ("uitars", "infigui", "uground")
GENERAL = "qwen"
PLATFORMS = (Platform.WEB, Platform.DESKTOP, Platform.MOBILE)
ELEMENTS = (ElementType.BUTTON, ElementType.ICON, ElementType.INPUT)


@dataclass(frozen=True)
class Design:
    record_id: str
    box: tuple[int, int, int, int]
    correct: tuple[bool, bool, bool]
    action: str            # "pick" or "reflect"
    target: int            # specialist index picked or sent back
    fixed: bool = False    # second look lands inside the box
    platform: Platform = Platform.WEB
    element: ElementType = ElementType.BUTTON


def _box(i: int) -> tuple[int, int, int, int]:
    x1, y1 = 100 + (i * 37) % 600, 100 + (i * 53) % 500
    return x1, y1, x1 + 40, y1 + 30


def round0_point(d: Design, j: int) -> tuple[int, int]:
    x1, y1 = d.box[:2]
    return (x1 + 5 + j, y1 + 5 + j) if d.correct[j] else (x1 + 100 + 10 * j, y1 + 100 + 10 * j)


def second_point(d: Design) -> tuple[int, int]:
    x1, y1 = d.box[:2]
    return (x1 + 20, y1 + 15) if d.fixed else (x1 + 150, y1 + 120)


_STYLES = (
    "Thought: found it.\nAction: click(start_box='({x},{y})')",
    "The element is at [{x}, {y}].",
    '{{"x": {x}, "y": {y}, "label": "target"}}',
)


def _spec_text(j: int, xy: tuple[int, int]) -> str:
    return _STYLES[j].format(x=xy[0], y=xy[1])


def episode_script(d: Design) -> dict[str, list[str]]:
    script = {sid: [_spec_text(j, round0_point(d, j))] for j, sid in enumerate(SPECS)}
    general = ["Reports compared; see decision."]
    if d.action == "pick":
        x, y = round0_point(d, d.target)
        general.append(f"{SPECS[d.target]} looks right.\nDECISION: CLICK({x}, {y})")
    else:
        general.append(f"Reports conflict.\nREFLECT:\n{SPECS[d.target]}: look again near the top bar")
        script[SPECS[d.target]].append(_spec_text(d.target, second_point(d)))
        x, y = second_point(d)
        general += ["Second look compared.", f"Taking the second look.\nDECISION: CLICK({x}, {y})"]
    script[GENERAL] = general
    return script


def record(d: Design) -> DatasetRecord:
    task = TaskSpec(f"click target {d.record_id}", ScreenshotMeta(W, H, f"screens/{d.record_id}.png"),
                    d.platform, d.element, BBox(*d.box))
    return DatasetRecord(task, Source.CUSTOM, d.record_id)


def library(designs) -> ScriptLibrary:
    return ScriptLibrary({d.record_id: episode_script(d) for d in designs})


# oracle ------------------------------------------------------------------

def inside(xy, box) -> bool:
    x1, y1, x2, y2 = box
    return tuple(xy) in {(x, y) for x in range(x1, x2) for y in range(y1, y2)}


def expected_point(d: Design, mode: str) -> tuple[int, int]:
    """Final click under SM:<id>, MM or GAIR, with FirstSpecialistCandidate as the fallback."""
    if mode.startswith("SM:"):
        return round0_point(d, SPECS.index(mode[3:]))
    if d.action == "pick":
        return round0_point(d, d.target)
    if mode == "MM":
        return round0_point(d, 0)  # reflection refused; first configured specialist's candidate
    return second_point(d)


def expected_hits(designs, mode: str) -> int:
    return sum(inside(expected_point(d, mode), d.box) for d in designs)


# generators --------------------------------------------------------------

def mixed_designs(n: int, seed: int = 7) -> list[Design]:
    """A varied set in which some reflections repair a round-0 miss and some do not."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        correct = tuple(rng.random() < 0.55 for _ in SPECS)
        if rng.random() < 0.4:
            # the general model only asks again when the first report is wrong
            action, target, fixed = "reflect", rng.randrange(3), rng.random() < 0.7
            correct = (False, *correct[1:])
        else:
            action, target, fixed = "pick", rng.randrange(3), False
        out.append(Design(f"t{i:03d}", _box(i), correct, action, target, fixed,
                          PLATFORMS[i % 3], ELEMENTS[(i // 3) % 3]))
    return out


def enumerated_designs(policy: str) -> list[Design]:
    """Every correctness pattern crossed with every pick, for every platform.

    ``uniform`` picks each of the three candidates once per pattern;
    ``prefer_correct`` picks the first correct specialist (0 when none is).
    """
    out = []
    i = 0
    for p in PLATFORMS:
        for mask in range(8):
            correct = tuple(bool(mask >> j & 1) for j in range(3))
            if policy == "uniform":
                picks = (0, 1, 2)
            else:
                picks = (next((j for j in range(3) if correct[j]), 0),)
            for j in picks:
                out.append(Design(f"e{i:03d}", _box(i), correct, "pick", j, False, p))
                i += 1
    return out


def write_suite(designs, root: Path, *, fallback: str = "FirstSpecialistCandidate") -> dict[str, Path]:
    """Write config, dataset and script files for the CLI."""
    root.mkdir(parents=True, exist_ok=True)
    cfg = {
        "endpoints": [{"id": GENERAL, "role": "general", "model_name": "Qwen2.5-VL-7B-Instruct"}]
        + [{"id": s, "role": "specialist"} for s in SPECS],
        "budget": {"max_reflection_rounds": 2, "fallback": fallback},
        "parallelism": 4,
    }
    paths = {"config": root / "config.json", "dataset": root / "dataset.jsonl", "script": root / "script.json"}
    paths["config"].write_text(json.dumps(cfg, indent=1), encoding="utf-8")
    with paths["dataset"].open("w", encoding="utf-8") as fh:
        for d in designs:
            fh.write(json.dumps({"id": d.record_id, "instruction": f"click target {d.record_id}",
                                 "image": f"screens/{d.record_id}.png", "bbox": list(d.box),
                                 "platform": d.platform.value, "element_type": d.element.value,
                                 "width": W, "height": H}) + "\n")
    library(designs).dump(paths["script"])
    return paths
