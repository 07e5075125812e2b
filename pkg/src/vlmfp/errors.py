"""Exception types shared across the pipeline modules."""


class VlmfpError(Exception):
    """Base class for all library errors."""


class ConfigError(VlmfpError):
    """Invalid configuration value, file, or recipe name."""


class DataError(VlmfpError):
    """Invalid input data (manifests, prediction files, payloads)."""


class DecodeError(DataError):
    """Malformed encoded-image payload.

    Carries the byte offset at which the container structure first
    stopped making sense.
    """

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class UnsupportedFormatError(DataError):
    """Well-formed image in a channel layout we do not accept."""


class TemplateError(DataError):
    """Chat messages violate the template contract (e.g. role order)."""


class ExpansionError(DataError):
    """Image-marker/tile-count mismatch during placeholder expansion."""


class MalformedSequenceError(DataError):
    """TokenSequence with inconsistent indices or spans."""


class DimensionError(DataError):
    """Array shape does not match the sequence it must align with."""


class DomainError(DataError):
    """Numeric input outside its documented domain."""


class BoxParseError(DataError):
    """Malformed plain-text box serialization.

    ``position`` is the character offset where parsing failed.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class UndefinedAPError(DataError):
    """Average precision is undefined (no ground-truth regions)."""


class ShapeError(DataError):
    """Grid/patch dimensions violate a divisibility requirement."""


class ArenaFullError(VlmfpError):
    """Arena cannot satisfy an allocation request."""

    def __init__(self, requested: int, remaining: int):
        super().__init__(
            f"arena full: requested {requested} bytes, {remaining} remaining"
        )
        self.requested = requested
        self.remaining = remaining


class AssemblyError(DataError):
    """Image-span length disagrees with the tile plan's token count."""

    def __init__(self, expected: int, got: int):
        super().__init__(
            f"visual token mismatch: plan expects {expected}, sequence carries {got}"
        )
        self.expected = expected
        self.got = got


class InstrumentationError(VlmfpError):
    """Unbalanced or misused profiling spans."""
