"""Multi-model GUI grounding: specialist ensemble, joint reasoning, group reflection, and an evaluation harness."""

from .config import RunConfig, load_config
from .core import (
    ABSOLUTE,
    NORMALIZED_1000,
    BBox,
    CoordConvention,
    CoordMode,
    GuiAction,
    Point,
    ScreenshotMeta,
    bbox_center,
    hit_test,
    parse_point,
    to_pixels,
)
from .ensemble import ElementType, Observation, Platform, ReflectionHint, TaskSpec, observe_all
from .gateway import ChatMessage, EndpointConfig, HttpGateway, ModelReply, Role, ScriptedGateway, ScriptLibrary
from .harness import DatasetRecord, EvalResult, Report, condition_analysis, emit_report, evaluate, load_dataset
from .orchestrator import GAIR, MM, Decision, EpisodeBudget, EpisodeOutcome, Fallback, Mode, parse_decision, run_episode
from .replay import replay_trace

__all__ = [
    "ABSOLUTE",
    "BBox",
    "bbox_center",
    "ChatMessage",
    "condition_analysis",
    "CoordConvention",
    "CoordMode",
    "DatasetRecord",
    "Decision",
    "ElementType",
    "emit_report",
    "EndpointConfig",
    "EpisodeBudget",
    "EpisodeOutcome",
    "EvalResult",
    "evaluate",
    "Fallback",
    "GAIR",
    "GuiAction",
    "hit_test",
    "HttpGateway",
    "load_config",
    "load_dataset",
    "MM",
    "Mode",
    "ModelReply",
    "NORMALIZED_1000",
    "Observation",
    "observe_all",
    "parse_decision",
    "parse_point",
    "Platform",
    "Point",
    "ReflectionHint",
    "replay_trace",
    "Report",
    "Role",
    "run_episode",
    "RunConfig",
    "ScreenshotMeta",
    "ScriptedGateway",
    "ScriptLibrary",
    "TaskSpec",
    "to_pixels",
]

__version__ = "0.1.0"
