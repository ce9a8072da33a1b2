"""Exception hierarchy shared by the edge, cloud and tooling layers."""

from __future__ import annotations


class ToauError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ToauError, ValueError):
    pass


class ShapeMismatchError(InvalidInputError):
    pass


class CanonicalizationError(ToauError):
    def __init__(self, frame: int, message: str = "degenerate facing vector"):
        super().__init__(f"{message} at frame {frame}")
        self.frame = frame


class RotationUndefinedError(ToauError):
    def __init__(self, joint: int, frame: int):
        super().__init__(f"zero-length bone for joint {joint} at frame {frame}")
        self.joint = joint
        self.frame = frame


class TrainingError(ToauError):
    pass


class CodebookMismatchError(ToauError):
    pass


class IndexRangeError(ToauError, ValueError):
    pass


class FileFormatError(InvalidInputError):
    pass


# -- wire protocol ---------------------------------------------------------

class ProtocolError(ToauError):
    """A packet or payload failed validation. ``code`` is the wire error name."""

    code = "protocol-error"


class BadMagicError(ProtocolError):
    code = "bad-magic"


class UnsupportedVersionError(ProtocolError):
    code = "unsupported-version"


class ChecksumMismatchError(ProtocolError):
    code = "crc-mismatch"


class PayloadLengthError(ProtocolError):
    code = "payload-length"


class IndexCountError(ProtocolError):
    code = "index-count"


class TruncatedPayloadError(ProtocolError):
    code = "truncated"


class MalformedPayloadError(ProtocolError):
    code = "malformed-payload"


class EncodingError(ProtocolError):
    code = "encoding"


# -- edge client -----------------------------------------------------------

class StageError(ToauError):
    """Wraps a failure inside one edge pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class ClientError(ToauError):
    exit_code = 1


class ConnectFailure(ClientError):
    exit_code = 3


class RequestTimeout(ClientError):
    exit_code = 4


class MalformedResponseError(ClientError):
    exit_code = 5


class ServerReportedError(ClientError):
    exit_code = 6

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"server error {code}: {message}" if message else f"server error {code}")
        self.code = code
