"""Exception hierarchy shared by every mfrl module."""


class MFRLError(Exception):
    """Base class for all library errors."""


class DimensionError(MFRLError, ValueError):
    pass


class DensityError(MFRLError, ValueError):
    """Raw probability mass too far from a valid distribution to renormalize."""


class NumericalConsistencyError(MFRLError, ArithmeticError):
    pass


class UnsupportedFamilyError(MFRLError, TypeError):
    """Operation not defined for the model's transition family."""


class GenerationError(MFRLError, RuntimeError):
    pass


class PreconditionError(MFRLError, ValueError):
    pass


class SizeError(MFRLError, ValueError):
    """Instance too large for an exhaustive oracle."""


class SchemaVersionError(MFRLError, ValueError):
    pass


class ConfigError(MFRLError, ValueError):
    pass
