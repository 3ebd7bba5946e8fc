"""Command-line entry point: run, bench, ablate, simulate, report, replay."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .core import ImageFormat, ScreenshotMeta, format_point
from .ensemble import TaskSpec
from .errors import GuiEnsembleError
from .gateway import HttpGateway, ScriptLibrary
from .harness import (
    Report,
    Source,
    _csv_rows,
    build_report,
    comparison_table,
    emit_report,
    evaluate,
    load_dataset,
    read_results,
    write_results,
)
from .orchestrator import GAIR, MM, Mode, ModeKind, run_episode
from .replay import replay_all, replay_trace
from .trace import EpisodeTrace, TraceWriter

log = logging.getLogger("gui_ensemble")


def _mode(args, cfg: RunConfig) -> Mode:
    return Mode.parse(args.mode) if getattr(args, "mode", None) else cfg.mode


def _write_report(report: Report, out: Path, layout: str, figures: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(emit_report(report, "markdown", layout), encoding="utf-8")
    (out / "report.csv").write_text(emit_report(report, "csv"), encoding="utf-8")
    if figures:
        from .figures import plot_conditions, plot_success

        plot_success(report, out / "figures" / "success_by_stratum.png")
        if report.conditions:
            plot_conditions(report, out / "figures" / "condition_rates.png")


def _bench(cfg: RunConfig, mode: Mode, dataset: str, source: str, gw, out: Path, layout: str,
           figures: bool, trace_path: str | None = None) -> Report:
    records = load_dataset(dataset, source)
    out.mkdir(parents=True, exist_ok=True)
    trace_file = Path(trace_path or cfg.trace_path or out / "trace.jsonl")
    with TraceWriter(trace_file, fresh=True) as writer:
        results, report = evaluate(records, mode, cfg, gw, writer=writer)
    write_results(results, out / "results.jsonl")
    _write_report(report, out, layout, figures)
    print(f"{mode}: {report.overall.hits}/{report.overall.total} hits -> {out / 'report.md'}")
    print(f"trace: {trace_file}")
    return report


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    mode = _mode(args, cfg)
    if args.task:
        task = TaskSpec.from_dict(json.loads(Path(args.task).read_text(encoding="utf-8")))
    else:
        if not (args.instruction and args.image):
            raise SystemExit("run: give --task, or both --instruction and --image")
        if args.width and args.height:
            w, h = args.width, args.height
        else:
            from PIL import Image

            with Image.open(args.image) as im:
                w, h = im.size
        task = TaskSpec(args.instruction, ScreenshotMeta(w, h, args.image, ImageFormat.from_path(args.image)),
                        args.platform)
    episode_id = args.episode_id
    gw = ScriptLibrary.load(args.script).for_episode(episode_id) if args.script else HttpGateway()
    trace_file = Path(args.trace or cfg.trace_path or "trace.jsonl")
    with TraceWriter(trace_file) as writer:
        outcome = run_episode(task, cfg, mode, gw, trace=EpisodeTrace(episode_id, writer))
    print(f"CLICK{format_point(outcome.final_action.point)} rounds={outcome.rounds_used} mode={mode}")
    print(f"trace: {trace_file}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    _bench(cfg, _mode(args, cfg), args.dataset, args.source, HttpGateway(), Path(args.out), args.layout,
           not args.no_figures, args.trace)
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    _bench(cfg, _mode(args, cfg), args.dataset, args.source, ScriptLibrary.load(args.script), Path(args.out),
           args.layout, not args.no_figures, args.trace)
    return 0


def cmd_ablate(args) -> int:
    """SM (best single specialist unless one is named), MM and GAIR over the same records."""
    cfg = load_config(args.config)
    gw = ScriptLibrary.load(args.script) if args.script else HttpGateway()
    out = Path(args.out)
    figures = not args.no_figures
    sm_ids = [args.sm_specialist] if args.sm_specialist else [s.id for s in cfg.specialists]
    sm_reports = []
    for sid in sm_ids:
        mode = Mode(ModeKind.SM, sid)
        sm_reports.append((sid, _bench(cfg, mode, args.dataset, args.source, gw, out / f"SM_{sid}",
                                       args.layout, figures)))
    best_id, best = max(sm_reports, key=lambda item: item[1].overall.hits)  # first wins ties
    rows = [(f"SM ({best_id})", best)]
    for mode in (MM, GAIR):
        rows.append((str(mode), _bench(cfg, mode, args.dataset, args.source, gw, out / str(mode),
                                       args.layout, figures)))
    (out / "ablation.md").write_text("# Ablation\n\n" + comparison_table(rows, args.layout) + "\n",
                                     encoding="utf-8")
    with (out / "ablation.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "section", "stratum", "hits", "total", "rate"])
        for label, rep in rows:
            w.writerows([label, *row] for row in _csv_rows(rep))
    if figures:
        from .figures import plot_comparison

        plot_comparison(rows, out / "figures" / "ablation.png")
    print((out / "ablation.md").read_text(encoding="utf-8"))
    return 0


def cmd_report(args) -> int:
    results = read_results(args.results)
    out = Path(args.out) if args.out else Path(args.results).parent
    _write_report(build_report(results), out, args.layout, not args.no_figures)
    print(f"report: {out / 'report.md'}")
    return 0


def cmd_replay(args) -> int:
    if args.episode:
        outcome = replay_trace(args.trace, args.episode)
        print(f"{args.episode}: CLICK{format_point(outcome.final_action.point)} reproduced")
        return 0
    for eid, result in replay_all(args.trace).items():
        if isinstance(result, Exception):
            print(f"{eid}: {type(result).__name__} reproduced")
        else:
            print(f"{eid}: CLICK{format_point(result.final_action.point)} reproduced")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gui-ensemble", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", required=True)
        sp.add_argument("--mode", help="SM:<specialist_id>, MM or GAIR (default: from config)")
        if dataset:
            sp.add_argument("--dataset", required=True)
            sp.add_argument("--source", default=Source.CUSTOM.value, choices=[s.value for s in Source])
            sp.add_argument("--out", required=True)
            sp.add_argument("--layout", default="uii2e", choices=["uii2e", "screenspot"])
            sp.add_argument("--no-figures", action="store_true")
            sp.add_argument("--trace")

    sp = sub.add_parser("run", help="run one episode")
    common(sp, dataset=False)
    sp.add_argument("--task", help="task JSON (as written in traces)")
    sp.add_argument("--instruction")
    sp.add_argument("--image")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--platform", default="Unknown")
    sp.add_argument("--script", help="script file; replies come from episode --episode-id")
    sp.add_argument("--episode-id", default="run")
    sp.add_argument("--trace")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("bench", help="evaluate a dataset against live endpoints")
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("simulate", help="evaluate a dataset against scripted replies")
    common(sp)
    sp.add_argument("--script", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("ablate", help="compare SM, MM and GAIR on one dataset")
    common(sp)
    sp.add_argument("--script")
    sp.add_argument("--sm-specialist")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="rebuild report files from results.jsonl")
    sp.add_argument("--results", required=True)
    sp.add_argument("--out")
    sp.add_argument("--layout", default="uii2e", choices=["uii2e", "screenspot"])
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("replay", help="re-run recorded episodes and check they reproduce")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--episode")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GuiEnsembleError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
