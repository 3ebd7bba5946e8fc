"""Prompt templates: packaged defaults, optionally overridden from a directory of ``.txt`` files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from string import Template

NAMES = (
    "specialist_system",
    "specialist_user",
    "specialist_hint",
    "specialist_recheck",
    "specialist_retry",
    "general_system",
    "general_analysis",
    "general_decision",
    "general_reask",
    "general_fallback",
)


class Templates:
    def __init__(self, texts: dict[str, str]):
        missing = set(NAMES) - set(texts)
        if missing:
            raise ValueError(f"missing templates: {sorted(missing)}")
        self._texts = {k: Template(v.rstrip("\n")) for k, v in texts.items()}

    @classmethod
    def load(cls, template_dir: str | Path | None = None) -> "Templates":
        pkg = resources.files("gui_ensemble") / "templates"
        texts = {name: (pkg / f"{name}.txt").read_text(encoding="utf-8") for name in NAMES}
        if template_dir is not None:
            for name in NAMES:
                override = Path(template_dir) / f"{name}.txt"
                if override.is_file():
                    texts[name] = override.read_text(encoding="utf-8")
        return cls(texts)

    def render(self, name: str, **values) -> str:
        return self._texts[name].substitute(**values)


_default: Templates | None = None


def default_templates() -> Templates:
    global _default
    if _default is None:
        _default = Templates.load()
    return _default
