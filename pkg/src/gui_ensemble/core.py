"""Geometry, action and coordinate-parsing primitives."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

from .errors import InvalidGeometry, NoCoordinateFound, OutOfRange

Number = Union[int, float]


def _check_coord(name: str, value: Number) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidGeometry(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value) or value < 0:
        raise InvalidGeometry(f"{name} must be finite and >= 0, got {value!r}")


def _tidy(value: Number) -> Number:
    """Collapse integral floats to int so 482.0 and 482 serialize identically."""
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


@dataclass(frozen=True)
class Point:
    x: Number
    y: Number

    def __post_init__(self):
        _check_coord("x", self.x)
        _check_coord("y", self.y)
        object.__setattr__(self, "x", _tidy(self.x))
        object.__setattr__(self, "y", _tidy(self.y))

    def to_list(self) -> list:
        return [self.x, self.y]

    @classmethod
    def from_list(cls, xy) -> "Point":
        return cls(xy[0], xy[1])

    def __str__(self) -> str:
        return format_point(self)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, half-open: [x1, x2) x [y1, y2)."""

    x1: Number
    y1: Number
    x2: Number
    y2: Number

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            _check_coord(name, getattr(self, name))
            object.__setattr__(self, name, _tidy(getattr(self, name)))
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidGeometry(
                f"box needs x1 < x2 and y1 < y2, got ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> Number:
        return self.x2 - self.x1

    @property
    def height(self) -> Number:
        return self.y2 - self.y1

    def to_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, coords) -> "BBox":
        if len(coords) != 4:
            raise InvalidGeometry(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*coords)


class ImageFormat(str, Enum):
    PNG = "PNG"
    JPEG = "JPEG"

    @property
    def mime(self) -> str:
        return "image/png" if self is ImageFormat.PNG else "image/jpeg"

    @classmethod
    def from_path(cls, path: str) -> "ImageFormat":
        return cls.JPEG if str(path).lower().endswith((".jpg", ".jpeg")) else cls.PNG


@dataclass(frozen=True)
class ScreenshotMeta:
    width: int
    height: int
    image_ref: str
    format: ImageFormat = ImageFormat.PNG

    def __post_init__(self):
        if not (isinstance(self.width, int) and isinstance(self.height, int)):
            raise InvalidGeometry("screenshot dimensions must be integers")
        if self.width <= 0 or self.height <= 0:
            raise InvalidGeometry(f"screenshot must be non-empty, got {self.width}x{self.height}")
        object.__setattr__(self, "format", ImageFormat(self.format))

    def contains(self, p: Point) -> bool:
        return p.x <= self.width - 1 and p.y <= self.height - 1

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "image_ref": self.image_ref, "format": self.format.value}

    @classmethod
    def from_dict(cls, d: dict) -> "ScreenshotMeta":
        return cls(int(d["width"]), int(d["height"]), d["image_ref"], ImageFormat(d.get("format", "PNG")))


class ActionKind(str, Enum):
    CLICK = "Click"


@dataclass(frozen=True)
class GuiAction:
    kind: ActionKind
    point: Point

    @classmethod
    def click(cls, point: Point, meta: ScreenshotMeta | None = None) -> "GuiAction":
        if meta is not None and not meta.contains(point):
            raise OutOfRange(f"click {point} outside {meta.width}x{meta.height} screenshot")
        return cls(ActionKind.CLICK, point)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "point": self.point.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "GuiAction":
        return cls(ActionKind(d["kind"]), Point.from_list(d["point"]))


class CoordMode(str, Enum):
    ABSOLUTE = "AbsolutePixels"
    NORMALIZED_1000 = "NormalizedThousand"


@dataclass(frozen=True)
class CoordConvention:
    mode: CoordMode = CoordMode.ABSOLUTE
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mode", CoordMode(self.mode))


ABSOLUTE = CoordConvention(CoordMode.ABSOLUTE)
NORMALIZED_1000 = CoordConvention(CoordMode.NORMALIZED_1000)


def hit_test(p: Point, b: BBox) -> bool:
    return b.x1 <= p.x < b.x2 and b.y1 <= p.y < b.y2


def bbox_center(b: BBox) -> Point:
    return Point(math.floor((b.x1 + b.x2) / 2), math.floor((b.y1 + b.y2) / 2))


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def to_pixels(p: Point, conv: CoordConvention, meta: ScreenshotMeta) -> Point:
    if conv.mode is CoordMode.ABSOLUTE:
        return p
    if p.x > 1000 or p.y > 1000:
        raise OutOfRange(f"normalized coordinate {p} exceeds the 0-1000 scale")
    x = min(max(_round_half_up(p.x * meta.width / 1000), 0), meta.width - 1)
    y = min(max(_round_half_up(p.y * meta.height / 1000), 0), meta.height - 1)
    return Point(x, y)


def format_point(p: Point) -> str:
    return f"({p.x}, {p.y})"


# Coordinate grammar. Tiers are tried in order; inside a tier the leftmost match wins.
_NUM = r"([-+]?\d+(?:\.\d+)?)"
_OPEN, _CLOSE = r"[\(\[]", r"[\)\]]"
_PAIR = rf"{_OPEN}\s*{_NUM}\s*,\s*{_NUM}\s*{_CLOSE}"

_BOX_PATTERNS = (
    re.compile(rf"{_PAIR}\s*,\s*{_PAIR}"),
    re.compile(rf"{_OPEN}\s*{_NUM}\s*,\s*{_NUM}\s*,\s*{_NUM}\s*,\s*{_NUM}\s*{_CLOSE}"),
)
_TUPLE_PATTERNS = (re.compile(_PAIR),)
_KV_PATTERNS = (
    re.compile(
        rf"(?<![A-Za-z0-9_])[\"']?x[\"']?\s*[:=]\s*{_NUM}"
        rf"[^\d]{{0,40}}?(?<![A-Za-z0-9_])[\"']?y[\"']?\s*[:=]\s*{_NUM}",
        re.IGNORECASE | re.DOTALL,
    ),
)
_TAGS = re.compile(r"<\|?/?(?:box_start|box_end|box|point|points)\|?>", re.IGNORECASE)


def _numbers(m: re.Match) -> list[float]:
    return [float(g) for g in m.groups()]


def _as_point(x: float, y: float) -> Point:
    if x < 0 or y < 0:
        raise OutOfRange(f"negative coordinate ({x}, {y})")
    return Point(x, y)


def _find_raw(text: str) -> Point:
    """Return the matched coordinate in the model's own frame (before conversion)."""
    for kind, patterns in (("box", _BOX_PATTERNS), ("point", _TUPLE_PATTERNS), ("point", _KV_PATTERNS)):
        matches = sorted((m for pat in patterns for m in pat.finditer(text)), key=lambda m: m.start())
        for m in matches:
            nums = _numbers(m)
            if kind == "box":
                if any(v < 0 for v in nums):
                    raise OutOfRange(f"negative coordinate in box {m.group(0)!r}")
                try:
                    box = BBox(*nums)
                except InvalidGeometry:
                    continue  # e.g. two unrelated points; let the tuple tier read them
                return bbox_center(box)
            return _as_point(*nums)
    raise NoCoordinateFound(f"no coordinate expression in {text[:80]!r}")


def parse_point(text: str, conv: CoordConvention, meta: ScreenshotMeta) -> Point:
    p = to_pixels(_find_raw(text), conv, meta)
    if not meta.contains(p):
        raise OutOfRange(f"{p} lies outside the {meta.width}x{meta.height} screenshot")
    return p


def strip_coordinates(text: str) -> str:
    """Remove every coordinate expression and box tag, then normalize spacing."""
    out = _TAGS.sub("", text)
    for pat in (*_BOX_PATTERNS, *_TUPLE_PATTERNS, *_KV_PATTERNS):
        out = pat.sub("", out)
    out = re.sub(r"[ \t]+", " ", out)
    return "\n".join(line.strip() for line in out.splitlines()).strip()
