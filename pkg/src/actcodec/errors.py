"""Exception hierarchy shared by every stage of the codec."""


class CodecError(Exception):
    """Base class for all errors raised by actcodec."""


class FormatError(CodecError):
    """A file or container does not have the expected layout (bad magic)."""


class CorruptionError(CodecError):
    """Stored data is truncated, fails its checksum or does not decode."""


class UnsupportedError(CodecError):
    """A known field holds a value this version cannot handle."""


class DomainError(CodecError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(CodecError, ValueError):
    pass


class ConfigError(CodecError, ValueError):
    pass


class DegenerateScaleError(DomainError):
    """An int8 scale would be infinite because the max magnitude is zero."""
