"""Exception hierarchy.

Two broad families: ValidationError for malformed inputs or violated
preconditions, NumericalError for failures inside otherwise well-posed
computations. The CLI maps these to distinct exit codes.
"""


class ConjointOptError(Exception):
    """Base class for all package errors."""


class ValidationError(ConjointOptError):
    """Bad input: shapes, schemas, simplex violations, parse failures."""


class InvalidParameterError(ValidationError):
    """Non-finite or out-of-range parameter values."""


class SupportTooLargeError(ValidationError):
    """An operation needed to enumerate more profiles than the cap allows."""

    def __init__(self, support_size, cap):
        self.support_size = support_size
        self.cap = cap
        super().__init__(
            f"support has {support_size} profiles, exceeding the cap of {cap}; "
            f"raise the cap only if enumeration is really intended"
        )


class ParseError(ValidationError):
    """Malformed file content; carries row/context information in the message."""


class SchemaError(ValidationError):
    """Structurally invalid JSON document."""


class CannotSplitError(ValidationError):
    """Dataset split impossible (too few respondents or empty part)."""


class PositivityError(ValidationError):
    """Observed profile has zero probability under the randomization design."""


class DivergenceUndefinedError(ValidationError):
    """Log probability ratio undefined because a profile has zero probability."""


class GridTooLargeError(ValidationError):
    """Strategy grid would exceed the configured pair budget."""


class InsufficientDataError(ValidationError):
    """Too few observations after filtering to fit the requested model."""


class NumericalError(ConjointOptError):
    """Failure inside a numerical routine."""


class SingularFitError(NumericalError):
    """Rank-deficient regression design matrix."""

    def __init__(self, aliased, message=None):
        self.aliased = tuple(aliased)
        super().__init__(
            message
            or "design matrix is rank deficient; aliased columns: "
            + ", ".join(self.aliased)
        )


class LambdaTooSmallError(NumericalError):
    """Closed-form system is singular; the penalty weight is too small."""


class NumericalFailureError(NumericalError):
    """Non-finite objective or gradient encountered; carries a trace."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class InferenceFailureError(NumericalError):
    """A solver re-run inside finite differencing failed."""

    def __init__(self, coefficient, cause):
        self.coefficient = coefficient
        super().__init__(
            f"solver failed while perturbing coefficient '{coefficient}': {cause}"
        )
