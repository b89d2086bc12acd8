"""Error taxonomy shared across the estimation stack."""


class EstimationError(Exception):
    """Base class for recoverable numerical failures during model fitting."""


class SeparationError(EstimationError):
    """Raised when a monotone likelihood drives coefficients toward infinity."""


class SingularError(EstimationError):
    """Raised when an information or design matrix is rank deficient."""


class NonConvergence(EstimationError):
    """Raised when an iterative fit exhausts its iteration budget."""


class ParseError(ValueError):
    """Malformed input file content; message carries file and line."""


class SchemaError(ValueError):
    """Input file header does not match the expected column layout."""
