"""Exception hierarchy shared across the package.

The CLI maps :class:`NumericFailure` subclasses to exit code 2 and every
other :class:`HtEncoderError` to exit code 1.
"""


class HtEncoderError(Exception):
    """Base class for all package errors."""


class ConfigError(HtEncoderError, ValueError):
    pass


class DimensionError(HtEncoderError, ValueError):
    pass


class DegenerateMaskError(HtEncoderError, ValueError):
    """An attention row with no allowed key."""


class EmptyContextError(HtEncoderError, ValueError):
    pass


class GraphError(HtEncoderError, RuntimeError):
    """Backward called on a detached or already-consumed graph."""


class IntegrityError(HtEncoderError, RuntimeError):
    pass


class CorpusError(HtEncoderError, ValueError):
    pass


class AlignmentError(HtEncoderError, ValueError):
    pass


class AnnotationError(HtEncoderError, ValueError):
    pass


class CompatibilityError(HtEncoderError, ValueError):
    pass


class ConversionError(HtEncoderError, ValueError):
    pass


class NumericFailure(HtEncoderError, ArithmeticError):
    """Base for failures that the CLI reports with exit code 2."""


class NonFiniteError(NumericFailure):
    pass


class DeterminismError(NumericFailure):
    pass
