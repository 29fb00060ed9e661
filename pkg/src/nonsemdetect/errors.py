"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1 (argparse),
DataError and subclasses exit 2, NumericError exits 3.
"""


class NonsemError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NonsemError):
    """Invalid or inconsistent configuration (shape mismatches, bad hyperparameters)."""


class DataError(NonsemError):
    """Problems with input data: files, formats, protocols, manifests."""


class FormatError(DataError):
    """Malformed binary or text file; message carries a byte offset or line number."""


class ParseError(DataError):
    """Unparseable protocol or manifest content."""


class ValidationError(DataError):
    """Structurally parseable data that violates a dataset invariant."""


class InvalidAudioError(DataError):
    """Audio input that cannot be used (empty, wrong rate, wrong encoding)."""


class NumericError(NonsemError):
    """Non-finite values or numerically degenerate inputs."""
