"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GuiEnsembleError(Exception):
    """Base class for every error raised by this package."""


# geometry / parsing

class InvalidGeometry(GuiEnsembleError, ValueError):
    pass


class NoCoordinateFound(GuiEnsembleError):
    pass


class OutOfRange(GuiEnsembleError, ValueError):
    pass


# gateway

class GatewayError(GuiEnsembleError):
    """A model call failed. ``tag`` is the short name stored in observations and traces."""

    tag = "GatewayError"


class GatewayTimeout(GatewayError):
    tag = "Timeout"


class TransportError(GatewayError):
    tag = "TransportError"


class EndpointError(GatewayError):
    tag = "EndpointError"

    def __init__(self, status: int, body: str):
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class ImageEncodingError(GatewayError):
    tag = "ImageEncodingError"


class ScriptExhausted(GuiEnsembleError):
    def __init__(self, endpoint_id: str, call_index: int):
        super().__init__(f"no scripted reply for ({endpoint_id!r}, {call_index})")
        self.endpoint_id = endpoint_id
        self.call_index = call_index


ERROR_TAGS: dict[str, type[GatewayError]] = {
    cls.tag: cls for cls in (GatewayTimeout, TransportError, EndpointError, ImageEncodingError)
}


def gateway_error_from_tag(tag: str, message: str = "") -> GatewayError:
    """Rebuild a gateway error from its tag (used by scripts and trace replay)."""
    try:
        cls = ERROR_TAGS[tag]
    except KeyError:
        raise ValueError(f"unknown error tag {tag!r}; expected one of {sorted(ERROR_TAGS)}") from None
    if cls is EndpointError:
        return EndpointError(500, message or "injected")
    return cls(message or f"injected {tag}")


# pipeline

class AllSpecialistsFailed(GuiEnsembleError):
    pass


class DecisionParseError(GuiEnsembleError):
    pass


class EpisodeFailed(GuiEnsembleError):
    def __init__(self, message: str, initial_observations=None):
        super().__init__(message)
        self.initial_observations = list(initial_observations or [])


# harness / config / trace

class ConfigError(GuiEnsembleError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, field_path: str, problem: str):
        super().__init__(f"{field_path}: {problem}")
        self.field_path = field_path
        self.problem = problem


class SchemaError(GuiEnsembleError):
    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        self.lines = [line for line, _ in problems]
        self.line = self.lines[0] if self.lines else None
        super().__init__("; ".join(f"line {line}: {msg}" for line, msg in problems))


class EmptyDataset(GuiEnsembleError):
    pass


class TraceIncomplete(GuiEnsembleError):
    pass


class ReplayDivergence(GuiEnsembleError):
    pass
