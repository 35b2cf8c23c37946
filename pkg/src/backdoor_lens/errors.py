"""Exception taxonomy shared by every module in the package."""

from __future__ import annotations


class BackdoorLensError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(BackdoorLensError):
    """A config file or CLI flag combination is unusable."""


class ParameterError(BackdoorLensError):
    """An argument violates a documented precondition."""


class ValidationError(BackdoorLensError):
    """Data content violates a documented invariant (range, finiteness)."""


class FormatError(BackdoorLensError):
    """A binary file does not match its advertised format."""


class SchemaError(BackdoorLensError):
    """A tabular file is structurally wrong (header, column set, row arity)."""


class ParseError(BackdoorLensError):
    """A cell failed to parse; carries row/column context in the message."""


class ConsistencyError(BackdoorLensError):
    """Two inputs that must agree (e.g. image and label counts) do not."""


class CapacityError(BackdoorLensError):
    """A requested sample count exceeds what the source data can provide."""


class GeometryError(BackdoorLensError):
    """An array shape is incompatible with the declared image geometry."""


class ShapeError(BackdoorLensError):
    """A collection that must form a complete grid has holes or duplicates."""


class ConvergenceError(BackdoorLensError):
    """The solver stopped before reaching the requested gradient norm."""

    def __init__(self, message: str, grad_norm: float | None = None):
        super().__init__(message)
        self.grad_norm = grad_norm


class ConditioningError(BackdoorLensError):
    """A linear system was too ill-conditioned to solve reliably."""


class DegenerateGeometryError(BackdoorLensError):
    """An angle was requested between vectors where one has zero norm."""

    def __init__(self, message: str, rho: float | None = None):
        super().__init__(message)
        self.rho = rho
