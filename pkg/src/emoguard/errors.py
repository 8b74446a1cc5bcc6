"""Exception hierarchy.

Every error carries the CLI exit code it maps to so the command-line layer can
translate failures without a lookup table.
"""
from __future__ import annotations


class EmoguardError(Exception):
    exit_code = 1


class UsageError(EmoguardError, ValueError):
    exit_code = 2


class AudioIOError(EmoguardError, OSError):
    exit_code = 3


class WavNotFoundError(AudioIOError, FileNotFoundError):
    pass


class FormatError(EmoguardError, ValueError):
    exit_code = 4


class MalformedWavError(FormatError):
    pass


class UnsupportedEncodingError(FormatError):
    pass


class InvalidClipError(EmoguardError, ValueError):
    exit_code = 4


class ClipTooShortError(InvalidClipError):
    pass


class ConfigError(UsageError):
    pass


class ModelFormatError(FormatError):
    pass


class ModelTruncatedError(ModelFormatError):
    pass


class ShapeMismatchError(EmoguardError, ValueError):
    exit_code = 4


class LabelError(EmoguardError, ValueError):
    exit_code = 4


class DatasetError(EmoguardError):
    exit_code = 4


class FilenameParseError(DatasetError, ValueError):
    """A corpus filename does not follow its dataset's naming convention."""


class UnknownCodeError(FilenameParseError):
    """Well-formed name carrying an emotion, intensity, or speaker code we don't know."""


class NotSpeechError(FilenameParseError):
    """RAVDESS file outside the speech-audio modality (song or video)."""


class EmptyDatasetError(DatasetError):
    pass


class RemoteError(EmoguardError):
    exit_code = 5


class MissingCredentialsError(RemoteError):
    pass


class TransientRemoteError(RemoteError):
    """Retryable failure: timeout, connection reset, HTTP 429/5xx."""


class RemoteTimeoutError(RemoteError):
    pass


class RemoteServiceError(RemoteError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class SweepError(EmoguardError):
    exit_code = 1
