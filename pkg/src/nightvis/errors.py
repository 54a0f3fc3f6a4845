"""Exception hierarchy shared across the package.

Each error that can surface through the command line carries an ``exit_code``
so the CLI can map failures onto its documented return codes.
"""


class NightVisError(Exception):
    exit_code = 1


class ShapeError(NightVisError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(NightVisError, ValueError):
    exit_code = 2


class StateError(NightVisError, RuntimeError):
    """An operation was requested before the object was ready for it."""


class DataError(NightVisError):
    exit_code = 3


class MissingFileError(DataError, FileNotFoundError):
    pass


class DataShapeError(DataError, ValueError):
    pass


class NonFiniteDataError(DataError, ValueError):
    pass


class CheckpointError(NightVisError):
    exit_code = 4
    code = "checkpoint"


class CheckpointFormatError(CheckpointError):
    code = "bad_magic"


class CheckpointVersionError(CheckpointError):
    code = "version_mismatch"


class CheckpointTruncatedError(CheckpointError):
    code = "truncated"


class CheckpointChecksumError(CheckpointError):
    code = "checksum"
