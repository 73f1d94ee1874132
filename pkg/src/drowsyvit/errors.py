"""Exception hierarchy shared across the package.

Every error raised on purpose derives from DrowsyVitError so the CLI can
map domain failures to a single exit code.
"""


class DrowsyVitError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(DrowsyVitError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(DrowsyVitError):
    """A NaN or Inf appeared where only finite values are allowed."""


class InvalidOracleError(DrowsyVitError):
    """A function handed to the finite-difference checker is not deterministic."""


class ParseError(DrowsyVitError):
    """A text input (detection file, config file) could not be parsed."""


class IngestionError(DrowsyVitError):
    """A dataset directory is malformed or an image cannot be decoded."""


class TrainingError(DrowsyVitError):
    """Training diverged or received invalid gradients."""


class CheckpointFormatError(DrowsyVitError):
    """Checkpoint file does not carry the expected magic bytes or framing."""


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint version is not supported by this build."""


class CheckpointIntegrityError(CheckpointFormatError):
    """Checkpoint tensor table disagrees with its own config snapshot."""
