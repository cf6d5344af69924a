"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so keep the classes coarse.
"""


class DinatError(Exception):
    pass


class DimensionError(DinatError, ValueError):
    """Operand shapes are inconsistent with an operator's contract."""


class GeometryError(DinatError, ValueError):
    """Spatial extent too small for the requested window / dilation / kernel."""


class ConfigError(DinatError, ValueError):
    pass


class ContractError(DinatError, RuntimeError):
    """A caller violated a precondition that is not about shapes."""


class FormatError(DinatError, ValueError):
    """Malformed checkpoint, image or manifest file."""


class DataError(DinatError, RuntimeError):
    pass


class NumericalError(DinatError, ArithmeticError):
    """NaN/inf encountered, or a gradient check failed."""
