"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericError(ArithmeticError):
    """Non-finite values or divergence in a numerical routine.

    ``step`` holds the step index at which the problem was detected, when
    one is meaningful.
    """

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class IntegrationDiverged(NumericError):
    pass


class InferenceDiverged(NumericError):
    """Raised by the inference loop; ``result`` holds the partial history."""

    def __init__(self, message, step=None, result=None):
        super().__init__(message, step)
        self.result = result
