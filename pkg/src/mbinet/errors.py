"""Exception hierarchy.

Everything raised deliberately by the toolkit derives from :class:`MBIError`.
:class:`DataError` covers bad inputs (files, manifests, shapes, degenerate
vectors); the CLI maps it to exit code 2. :class:`RuntimeFailure` covers
failures during computation (exit code 3).
"""


class MBIError(Exception):
    pass


class DataError(MBIError, ValueError):
    pass


class RuntimeFailure(MBIError, RuntimeError):
    pass


# audio
class MalformedWav(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class SignalTooShort(DataError):
    pass


# embeddings
class FixtureMissing(DataError, FileNotFoundError):
    pass


class DimensionMismatch(DataError):
    pass


# model
class ShapeMismatch(DataError):
    pass


class CheckpointMismatch(DataError):
    pass


# objectives
class EmptyFrames(DataError):
    pass


class EmptyBatch(DataError):
    pass


class MissingTarget(DataError):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class DegenerateInput(DataError):
    """Correlation is undefined because one of the vectors is constant."""


# manifest
class SchemaError(DataError):
    pass


class RangeError(DataError):
    pass


class DuplicateId(DataError):
    pass


class TooFewEntries(DataError):
    pass


# training
class NonFiniteLoss(RuntimeFailure):
    pass
