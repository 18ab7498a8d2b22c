"""Exception hierarchy shared by all modules."""


class PMvGEError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PMvGEError, ValueError):
    """Input data or parameters violate a documented constraint."""


class DimensionMismatchError(ValidationError):
    pass


class InnerProductOverflowError(PMvGEError, ArithmeticError):
    """exp(<y_i, y_j>) is not representable as a finite float."""

    def __init__(self, inner_product: float, message: str | None = None):
        self.inner_product = float(inner_product)
        super().__init__(message or f"exp overflow at inner product {self.inner_product:.6g}")


class DegenerateLikelihoodError(PMvGEError, ArithmeticError):
    """A pair with positive weight has zero mean, so the log-likelihood is -inf."""


class TrainingError(PMvGEError):
    """Wraps a numeric failure raised during training with the iteration index."""

    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"iteration {iteration}: {cause}")
