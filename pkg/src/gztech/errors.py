"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad inputs: wrong sample rate, malformed config, shape mismatch at the API."""


class ShapeError(ValidationError):
    """Tensor shape inconsistency, reported with the offending layer when known."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss or gradient.

    Carries the global step index at which the failure occurred.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step
