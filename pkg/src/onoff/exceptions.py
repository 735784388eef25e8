"""Exception hierarchy shared by the compute modules and the CLI."""


class OnOffError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(OnOffError, ValueError):
    """A parameter lies outside the domain of an operation."""


class ValidationError(OnOffError, ValueError):
    """Input data violates a documented invariant.

    ``record`` is the zero-based index of the offending record, if any.
    """

    def __init__(self, message, record=None):
        self.record = record
        super().__init__(message)


class ParseError(ValidationError):
    """A data file could not be parsed.

    Carries the offending line number (1-based, header is line 1).
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateModelError(OnOffError, ArithmeticError):
    """The model assigns zero probability to an observed event."""

    def __init__(self, message, eta=None):
        self.eta = eta
        super().__init__(message)


class IllConditionedError(OnOffError, ArithmeticError):
    """A least-squares inversion is rank deficient or badly conditioned."""

    def __init__(self, message, condition_number):
        self.condition_number = condition_number
        super().__init__(f"{message} (condition number {condition_number:.3g})")
