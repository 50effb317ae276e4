"""Exception types shared across modules."""


class FragdockError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class NumericError(FragdockError):
    """Numerical failure (exit code 3)."""


class InputError(FragdockError):
    """Malformed or inconsistent input (exit code 2)."""


class AngleNearPi(NumericError):
    pass


class TruncationInsufficient(NumericError):
    pass


class OutOfRange(NumericError):
    pass


class DegenerateConfiguration(NumericError):
    pass


class UndefinedDihedral(NumericError):
    pass


class CombinatorialLimit(NumericError):
    pass


class Divergence(NumericError):
    pass


class DimensionMismatch(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DisconnectedError(InputError):
    pass


class NoCoordinates(InputError):
    pass


class ConfigError(InputError):
    pass


class SingularInertia(UserWarning):
    """Inertia matrix was rank-deficient; a pseudo-inverse was used."""
