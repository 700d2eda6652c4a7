"""Exception and warning types shared across the package."""


class UnfoldsrError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(UnfoldsrError, ValueError):
    """A parameter violates its contract (e.g. negative threshold)."""


class DimensionMismatchError(UnfoldsrError, ValueError):
    """Operands have incompatible shapes."""


class DegenerateInputError(UnfoldsrError, ValueError):
    """Input is structurally unusable (e.g. all-zero dictionary)."""


class NumericFailureError(UnfoldsrError, ArithmeticError):
    """A computation produced non-finite values.

    ``tensor_name`` identifies the first offending tensor when known;
    ``batch_index`` identifies the offending training batch when known.
    """

    def __init__(self, message, tensor_name=None, batch_index=None):
        super().__init__(message)
        self.tensor_name = tensor_name
        self.batch_index = batch_index


class ConfigError(UnfoldsrError, ValueError):
    """Bad run configuration (unknown key, unparsable or invalid value)."""


class MissingDataError(UnfoldsrError):
    """A required dataset path does not exist or contains no scenes."""


class FormatError(UnfoldsrError, ValueError):
    """Base class for file-format errors (images, checkpoints)."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """File ended before the declared payload was read."""


class UnsupportedFormatError(FormatError):
    """Recognized container but unsupported variant (e.g. odd maxval)."""


class VersionMismatchError(FormatError):
    """Checkpoint version differs from the one this code writes."""


class ShapeMismatchError(FormatError):
    """Stored tensor shapes disagree with the requested configuration."""


class ConvergenceWarning(RuntimeWarning):
    """An iterative routine hit its iteration cap before converging."""
