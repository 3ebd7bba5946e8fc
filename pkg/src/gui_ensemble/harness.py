"""Benchmark ingestion, episode execution, scoring and stratified reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import BBox, ImageFormat, Point, ScreenshotMeta, hit_test
from .ensemble import ElementType, Platform, TaskSpec
from .errors import (
    ConfigError,
    EmptyDataset,
    EpisodeFailed,
    GuiEnsembleError,
    InvalidGeometry,
    SchemaError,
    ScriptExhausted,
)
from .orchestrator import Mode, ModeKind, run_episode
from .trace import EpisodeTrace, TraceWriter

log = logging.getLogger(__name__)


class Source(str, Enum):
    SCREENSPOT = "ScreenSpot"
    UII2E = "UII2E"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class DatasetRecord:
    task: TaskSpec
    source: Source
    record_id: str

    def __post_init__(self):
        if self.task.gt_box is None:
            raise ValueError(f"record {self.record_id}: ground-truth box required")


# ingestion ---------------------------------------------------------------

_PLATFORM_WORDS = {
    "web": Platform.WEB, "gitlab": Platform.WEB, "shop": Platform.WEB, "forum": Platform.WEB,
    "tool": Platform.WEB, "desktop": Platform.DESKTOP, "windows": Platform.DESKTOP,
    "macos": Platform.DESKTOP, "linux": Platform.DESKTOP, "pc": Platform.DESKTOP,
    "mobile": Platform.MOBILE, "ios": Platform.MOBILE, "android": Platform.MOBILE,
    "phone": Platform.MOBILE, "unknown": Platform.UNKNOWN,
}
_ELEMENT_WORDS = {
    "button": ElementType.BUTTON, "icon": ElementType.ICON, "dropdown": ElementType.DROPDOWN,
    "combobox": ElementType.DROPDOWN, "select": ElementType.DROPDOWN, "menu": ElementType.DROPDOWN,
    "input": ElementType.INPUT, "textbox": ElementType.INPUT, "textfield": ElementType.INPUT,
    "edit": ElementType.INPUT, "toggle": ElementType.TOGGLE, "switch": ElementType.TOGGLE,
    "checkbox": ElementType.TOGGLE, "text": ElementType.TEXT, "other": ElementType.OTHER,
}


def _platform(value) -> Platform:
    if value is None:
        return Platform.UNKNOWN
    key = str(value).strip().lower()
    if key not in _PLATFORM_WORDS:
        raise ValueError(f"unknown platform {value!r}")
    return _PLATFORM_WORDS[key]


def _element(value) -> Optional[ElementType]:
    if value is None or value == "":
        return None
    return _ELEMENT_WORDS.get(str(value).strip().lower(), ElementType.OTHER)


def _adapt_screenspot(raw: dict) -> dict:
    """ScreenSpot rows: ``img_filename``, ``bbox`` as [x, y, w, h] pixels, ``data_type``, ``data_source``."""
    if "img_filename" not in raw:
        return raw
    x, y, w, h = raw["bbox"]
    return {
        "id": raw.get("id"),
        "instruction": raw["instruction"],
        "image": raw["img_filename"],
        "bbox": [x, y, x + w, y + h],
        "platform": raw.get("platform", raw.get("data_source")),
        "element_type": raw.get("data_type"),
        "width": raw.get("width"),
        "height": raw.get("height"),
    }


def _adapt_uii2e(raw: dict) -> dict:
    """UI-I2E rows may use ``image_path``/``intent``/``type`` and boxes normalized to [0, 1]."""
    out = dict(raw)
    for src, dst in (("image_path", "image"), ("img_filename", "image"), ("intent", "instruction"),
                     ("type", "element_type"), ("element", "element_type")):
        if src in raw and dst not in out:
            out[dst] = raw[src]
    if "image_size" in raw and "width" not in raw:
        out["width"], out["height"] = raw["image_size"]
    out["_bbox_normalized"] = raw.get("bbox_normalized", _looks_normalized(raw.get("bbox")))
    return out


def _looks_normalized(bbox) -> bool:
    try:
        return all(isinstance(v, float) and 0.0 <= v <= 1.0 for v in bbox) and any(v > 0 for v in bbox)
    except TypeError:
        return False


_ADAPTERS = {Source.SCREENSPOT: _adapt_screenspot, Source.UII2E: _adapt_uii2e, Source.CUSTOM: lambda r: r}


def _image_size(path: Path) -> tuple[int, int, ImageFormat]:
    from PIL import Image

    with Image.open(path) as im:
        fmt = ImageFormat.JPEG if im.format == "JPEG" else ImageFormat.PNG
        return im.width, im.height, fmt


def _record_from(row: dict, base: Path, source: Source, lineno: int) -> DatasetRecord:
    for key in ("instruction", "image", "bbox"):
        if key not in row:
            raise ValueError(f"missing field {key!r}")
    rid = row.get("id")
    rid = str(rid) if rid is not None else f"{source.value.lower()}-{lineno}"
    image_path = str(base / row["image"])
    fmt = ImageFormat.from_path(image_path)
    if row.get("width") and row.get("height"):
        width, height = int(row["width"]), int(row["height"])
    else:
        try:
            width, height, fmt = _image_size(Path(image_path))
        except OSError as exc:
            raise ValueError(f"no width/height given and image unreadable: {exc}") from None
    coords = [float(v) for v in row["bbox"]]
    if len(coords) != 4:
        raise ValueError("bbox must have 4 numbers")
    if row.get("_bbox_normalized"):
        coords = [coords[0] * width, coords[1] * height, coords[2] * width, coords[3] * height]
    box = BBox(*coords)
    task = TaskSpec(
        instruction=str(row["instruction"]),
        screenshot=ScreenshotMeta(width, height, image_path, fmt),
        platform=_platform(row.get("platform")),
        element_type=_element(row.get("element_type")),
        gt_box=box,
    )
    return DatasetRecord(task, source, rid)


def load_dataset(path: str | Path, source: Source | str = Source.CUSTOM) -> list[DatasetRecord]:
    """Read a JSONL benchmark file into records.

    The canonical row is ``{id, instruction, image, bbox: [x1, y1, x2, y2], platform,
    element_type}`` with optional ``width``/``height``; ``source`` picks an adapter
    for upstream field names. Every bad line is reported in one SchemaError.
    """
    path = Path(path)
    source = Source(source)
    adapt = _ADAPTERS[source]
    records: list[DatasetRecord] = []
    problems: list[tuple[int, str]] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict):
                    raise ValueError("line is not a JSON object")
                rec = _record_from(adapt(row), path.parent, source, lineno)
            except (ValueError, KeyError, TypeError, InvalidGeometry) as exc:
                problems.append((lineno, str(exc)))
                continue
            if rec.record_id in seen:
                problems.append((lineno, f"duplicate record id {rec.record_id!r}"))
                continue
            seen.add(rec.record_id)
            records.append(rec)
    if problems:
        raise SchemaError(problems)
    if not records:
        raise EmptyDataset(f"{path} has no records")
    return records


def dump_dataset(records: Sequence[DatasetRecord], path: str | Path) -> None:
    """Write records in the canonical schema (image paths kept as stored)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            t = r.task
            fh.write(json.dumps({
                "id": r.record_id, "instruction": t.instruction, "image": t.screenshot.image_ref,
                "bbox": t.gt_box.to_list(), "platform": t.platform.value,
                "element_type": t.element_type.value if t.element_type else None,
                "width": t.screenshot.width, "height": t.screenshot.height,
            }) + "\n")


# evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    record_id: str
    mode: str
    predicted: Optional[Point]
    hit: bool
    rounds_used: int
    specialist_hits: dict
    latency_ms: float
    platform: Platform = Platform.UNKNOWN
    element_type: Optional[ElementType] = None
    error: Optional[str] = None

    @property
    def k_correct(self) -> int:
        return sum(bool(v) for v in self.specialist_hits.values())

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "mode": self.mode,
            "predicted": self.predicted.to_list() if self.predicted is not None else None,
            "hit": self.hit,
            "rounds_used": self.rounds_used,
            "specialist_hits": dict(sorted(self.specialist_hits.items())),
            "latency_ms": round(self.latency_ms, 3),
            "platform": Platform(self.platform).value,
            "element_type": self.element_type.value if self.element_type else None,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(
            d["record_id"], d["mode"],
            Point.from_list(d["predicted"]) if d.get("predicted") is not None else None,
            bool(d["hit"]), int(d["rounds_used"]), dict(d["specialist_hits"]), float(d["latency_ms"]),
            Platform(d.get("platform", "Unknown")),
            ElementType(d["element_type"]) if d.get("element_type") else None,
            d.get("error"),
        )


def _specialist_hits(observations, box: BBox) -> dict:
    return {o.specialist_id: hit_test(o.candidate, box)
            for o in observations if o.round == 0 and o.candidate is not None}


def evaluate_record(record: DatasetRecord, mode: Mode, cfg, gw, *, writer: TraceWriter | None = None,
                    templates=None) -> EvalResult:
    task = record.task
    trace = EpisodeTrace(record.record_id, writer)
    kw = dict(platform=task.platform, element_type=task.element_type)
    try:
        outcome = run_episode(task, cfg, mode, gw.for_episode(record.record_id), trace=trace,
                              templates=templates)
    except (GuiEnsembleError, ScriptExhausted) as exc:
        initial = exc.initial_observations if isinstance(exc, EpisodeFailed) else ()
        log.info("%s [%s] failed: %s", record.record_id, mode, exc)
        return EvalResult(record.record_id, str(mode), None, False, 0, _specialist_hits(initial, task.gt_box),
                          trace.total_latency_ms, error=type(exc).__name__, **kw)
    pred = outcome.final_action.point
    hit = hit_test(pred, task.gt_box)
    log.info("%s [%s] %s -> %s (%d rounds)", record.record_id, mode, pred, "hit" if hit else "miss",
             outcome.rounds_used)
    return EvalResult(record.record_id, str(mode), pred, hit, outcome.rounds_used,
                      _specialist_hits(outcome.initial_observations, task.gt_box), outcome.latency_ms, **kw)


def evaluate(
    records: Sequence[DatasetRecord],
    mode: Mode,
    cfg,
    gw,
    *,
    writer: TraceWriter | None = None,
    parallelism: int | None = None,
) -> tuple[list[EvalResult], "Report"]:
    """Run every record and score it. Failed episodes count as misses; results keep record order."""
    if not records:
        raise ValueError("evaluate needs at least one record")
    if mode.kind is ModeKind.SM and mode.specialist_id not in {s.id for s in cfg.specialists}:
        raise ConfigError(f"SM mode names unknown specialist {mode.specialist_id!r}")
    templates = cfg.templates()
    workers = parallelism or cfg.parallelism

    def one(rec):
        return evaluate_record(rec, mode, cfg, gw, writer=writer, templates=templates)

    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    return results, build_report(results)


def write_results(results: Iterable[EvalResult], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_results(path: str | Path) -> list[EvalResult]:
    with Path(path).open(encoding="utf-8") as fh:
        return [EvalResult.from_dict(json.loads(line)) for line in fh if line.strip()]


# aggregation -------------------------------------------------------------

@dataclass(frozen=True)
class Counts:
    hits: int = 0
    total: int = 0

    def add(self, hit: bool) -> "Counts":
        return Counts(self.hits + int(hit), self.total + 1)

    @property
    def rate(self) -> Optional[Fraction]:
        return Fraction(self.hits, self.total) if self.total else None


UNSPECIFIED = "Unspecified"
PLATFORM_KEYS = [p.value for p in Platform]
ELEMENT_KEYS = [e.value for e in ElementType] + [UNSPECIFIED]


def _tally(items: Iterable[tuple[str, bool]], keys: Sequence[str]) -> dict[str, Counts]:
    out = {k: Counts() for k in keys}
    for key, hit in items:
        out[key] = out.get(key, Counts()).add(hit)
    return out


def _el_key(r: EvalResult) -> str:
    return r.element_type.value if r.element_type else UNSPECIFIED


@dataclass(frozen=True)
class ConditionStratum:
    overall: Counts
    platform: dict
    element: dict


def condition_analysis(results: Sequence[EvalResult]) -> dict[int, ConditionStratum]:
    """Decision-correct rates grouped by how many specialists were right in round 0."""
    groups: dict[int, list[EvalResult]] = {}
    for r in results:
        groups.setdefault(r.k_correct, []).append(r)
    return {
        k: ConditionStratum(
            overall=_tally((("all", r.hit) for r in rs), ["all"])["all"],
            platform=_tally(((r.platform.value, r.hit) for r in rs), PLATFORM_KEYS),
            element=_tally(((_el_key(r), r.hit) for r in rs), ELEMENT_KEYS),
        )
        for k, rs in sorted(groups.items())
    }


@dataclass(frozen=True)
class Report:
    mode: str
    overall: Counts
    platform: dict
    element: dict
    cross: dict
    conditions: dict = field(default_factory=dict)


def build_report(results: Sequence[EvalResult]) -> Report:
    modes = sorted({r.mode for r in results})
    return Report(
        mode=", ".join(modes),
        overall=_tally((("all", r.hit) for r in results), ["all"])["all"],
        platform=_tally(((r.platform.value, r.hit) for r in results), PLATFORM_KEYS),
        element=_tally(((_el_key(r), r.hit) for r in results), ELEMENT_KEYS),
        cross=_tally(((f"{r.platform.value}|{_el_key(r)}", r.hit) for r in results),
                     [f"{p}|{e}" for p in PLATFORM_KEYS for e in ELEMENT_KEYS]),
        conditions=condition_analysis(results),
    )


# rendering ---------------------------------------------------------------

EMPTY_CELL = "—"
UII2E_PLATFORMS = ["Web", "Desktop", "Mobile"]
UII2E_ELEMENTS = ["Button", "Icon", "Dropdown", "Input", "Toggle"]
SCREENSPOT_CELLS = [(p, e) for p in ("Mobile", "Desktop", "Web") for e in ("Text", "Icon")]


def format_rate(c: Counts) -> str:
    """Percentage to one decimal, halves rounded up, computed exactly."""
    if c.total == 0:
        return EMPTY_CELL
    tenths = (2 * 1000 * c.hits + c.total) // (2 * c.total)
    return f"{tenths // 10}.{tenths % 10}"


def _columns(report: Report, layout: str) -> list[tuple[str, Counts]]:
    if layout == "uii2e":
        return ([(p, report.platform[p]) for p in UII2E_PLATFORMS]
                + [(e, report.element[e]) for e in UII2E_ELEMENTS]
                + [("Overall", report.overall)])
    if layout == "screenspot":
        return ([(f"{p} {e}", report.cross[f"{p}|{e}"]) for p, e in SCREENSPOT_CELLS]
                + [("Overall", report.overall)])
    raise ValueError(f"unknown layout {layout!r}")


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def _condition_label(k: int) -> str:
    return f"{k} model{'' if k == 1 else 's'} correct"


def comparison_table(rows: Sequence[tuple[str, Report]], layout: str = "uii2e") -> str:
    header = ["Method"] + [name for name, _ in _columns(rows[0][1], layout)]
    body = [[label] + [format_rate(c) for _, c in _columns(rep, layout)] for label, rep in rows]
    return _md_table(header, body)


def emit_report(report: Report, format: str = "markdown", layout: str = "uii2e") -> str:
    fmt = format.lower()
    if fmt == "markdown":
        return _emit_markdown(report, layout)
    if fmt == "csv":
        return _emit_csv(report)
    raise ValueError(f"unknown report format {format!r}")


def _emit_markdown(report: Report, layout: str) -> str:
    cols = _columns(report, layout)
    header = ["Method"] + [name for name, _ in cols]
    parts = [
        f"# Grounding report\n\nMode: {report.mode}. Records: {report.overall.total}. "
        f"Hits: {report.overall.hits}.\n",
        "## Success rate (%)\n",
        _md_table(header, [[report.mode] + [format_rate(c) for _, c in cols],
                           ["n"] + [str(c.total) for _, c in cols]]),
    ]
    if report.conditions:
        cheader = ["Condition"] + [p for p in UII2E_PLATFORMS] + UII2E_ELEMENTS + ["Overall"]
        rows = []
        for k, s in sorted(report.conditions.items()):
            cells = ([s.platform[p] for p in UII2E_PLATFORMS] + [s.element[e] for e in UII2E_ELEMENTS]
                     + [s.overall])
            rows.append([_condition_label(k)] + [format_rate(c) for c in cells])
            rows.append([f"n ({k})"] + [str(c.total) for c in cells])
        parts += ["\n## Decision correct rate by number of correct specialists (%)\n", _md_table(cheader, rows)]
    return "\n".join(parts) + "\n"


CSV_HEADER = ["section", "stratum", "hits", "total", "rate"]


def _csv_rows(report: Report) -> list[list[str]]:
    rows = [["overall", "all", report.overall]]
    rows += [["platform", k, c] for k, c in report.platform.items()]
    rows += [["element", k, c] for k, c in report.element.items()]
    rows += [["cross", k, c] for k, c in report.cross.items()]
    for k, s in sorted(report.conditions.items()):
        rows.append([f"condition:{k}", "all", s.overall])
        rows += [[f"condition:{k}:platform", p, c] for p, c in s.platform.items()]
        rows += [[f"condition:{k}:element", e, c] for e, c in s.element.items()]
    return [[sec, key, str(c.hits), str(c.total), format_rate(c)] for sec, key, c in rows]


def _emit_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", report.mode, "", "", ""])
    w.writerow(CSV_HEADER)
    w.writerows(_csv_rows(report))
    return buf.getvalue()


def parse_report_csv(text: str) -> Report:
    """Inverse of the CSV emitter."""
    rows = list(csv.reader(io.StringIO(text)))
    mode = rows[0][1]
    if rows[1] != CSV_HEADER:
        raise ValueError("not a report CSV")
    sections: dict[str, dict[str, Counts]] = {}
    for sec, key, hits, total, rate in rows[2:]:
        c = Counts(int(hits), int(total))
        if format_rate(c) != rate:
            raise ValueError(f"rate cell {rate!r} disagrees with {hits}/{total}")
        sections.setdefault(sec, {})[key] = c
    conditions = {}
    for sec in sections:
        if sec.startswith("condition:") and sec.count(":") == 1:
            k = int(sec.split(":")[1])
            conditions[k] = ConditionStratum(sections[sec]["all"], sections[f"{sec}:platform"],
                                             sections[f"{sec}:element"])
    return Report(mode, sections["overall"]["all"], sections["platform"], sections["element"],
                  sections["cross"], dict(sorted(conditions.items())))
