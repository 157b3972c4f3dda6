"""Exception hierarchy used across the toolkit."""


class MFBOError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MFBOError, ValueError):
    """Invalid configuration (bad field value, unknown key, budget too small)."""


class DataError(MFBOError, ValueError):
    """Malformed or inconsistent input data (CSV parsing, table shapes)."""


class UnsupportedSpaceError(MFBOError, TypeError):
    pass


class CapacityError(MFBOError, ValueError):
    pass


class ExhaustionError(MFBOError, RuntimeError):
    """Every admissible (candidate, fidelity) pair has already been queried."""


class FitError(MFBOError, RuntimeError):
    """The kernel matrix could not be made positive definite."""


class AlignmentError(MFBOError, ValueError):
    """A multi-fidelity trace cannot be aligned to the single-fidelity cost grid."""


class ModeError(MFBOError, ValueError):
    pass
