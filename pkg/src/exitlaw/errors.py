"""Exception hierarchy.

``ConfigError`` covers malformed input (problem files, expressions, flags);
``HypothesisError`` covers inputs that are well formed but violate a
mathematical assumption of the exit-law theory (no crossing, tangential
crossing, wrong drift sign). The CLI maps the two families to distinct
exit codes.
"""


class ExitLawError(Exception):
    """Base class for all package errors."""


class ConfigError(ExitLawError):
    pass


class ExpressionSyntaxError(ConfigError):
    def __init__(self, message, offset=None, source=None):
        self.offset = offset
        self.source = source
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)


class ProblemError(ConfigError):
    pass


class DomainError(ExitLawError):
    """An expression was evaluated outside its domain (log of 0, ...)."""


class NonDifferentiableError(DomainError):
    pass


class HypothesisError(ExitLawError):
    pass


class NoHit(HypothesisError):
    pass


class TangentialCrossing(HypothesisError):
    pass


class BoxExit(HypothesisError):
    def __init__(self, message, time):
        self.time = time
        super().__init__(message)


class DriftSignError(HypothesisError):
    pass


class RejectionInfeasible(HypothesisError):
    def __init__(self, message, acceptance_probability):
        self.acceptance_probability = acceptance_probability
        super().__init__(message)
