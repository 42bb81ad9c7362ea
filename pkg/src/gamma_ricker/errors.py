"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation.

    ``field`` names the offending argument so callers (and the CLI) can report it.
    """

    def __init__(self, field, value, requirement):
        self.field = field
        self.value = value
        self.requirement = requirement
        super().__init__(f"{field}={value!r} violates {requirement}")


class UnsupportedOrder(ValueError):
    pass


class NumericFailure(ArithmeticError):
    """A non-finite intermediate appeared; ``inputs`` holds what was being evaluated."""

    def __init__(self, message, inputs=None):
        self.inputs = inputs or {}
        super().__init__(message)


class StabilityUndefined(ArithmeticError):
    pass


class UndefinedCV(ArithmeticError):
    pass


def require_positive(field, value):
    if not value > 0:
        raise DomainError(field, value, "> 0")
    return value
