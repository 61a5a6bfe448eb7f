"""Exception hierarchy shared by every stage of the pipeline."""


class GaleError(Exception):
    """Base class; the CLI turns these into a one-line diagnostic."""


class ConfigError(GaleError, ValueError):
    pass


class ShapeError(GaleError, ValueError):
    pass


class ParseError(GaleError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshReferenceError(GaleError, IndexError):
    """A mesh entity points at a vertex or cell that does not exist."""

    def __init__(self, message, index=None, line=None):
        self.index = index
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GeometryError(GaleError):
    pass


class TopologyError(GaleError):
    pass


class DataError(GaleError):
    pass


class DegenerateDomainError(GaleError):
    pass


class DomainError(GaleError, ValueError):
    """Evaluation point lies inside the body."""


class NumericError(GaleError, FloatingPointError):
    pass


class StagnationEstimateError(NumericError):
    pass


class CoverageError(GaleError):
    pass
