"""Exception hierarchy shared across the package."""


class KdlabError(Exception):
    """Base class for all package errors."""


class DimensionError(KdlabError):
    """Operand shapes are incompatible."""


class ContractError(KdlabError):
    """A documented precondition was violated."""


class NumericError(KdlabError):
    """A computation produced or received non-finite values."""


class ParseError(KdlabError):
    """A text artifact (model file, dataset, config) is malformed."""
