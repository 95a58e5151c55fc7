"""Exception types shared across the package."""


class StructureError(ValueError):
    """Kernel structure and hyperparameter layout disagree, or an edit is impossible."""


class KernelSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownKernelError(KernelSyntaxError):
    pass


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class NumericalDegeneracyError(ArithmeticError):
    """Cholesky factorization failed for every jitter on the ladder."""

    def __init__(self, message: str, jitter: float):
        super().__init__(f"{message} (last jitter tried: {jitter:g})")
        self.jitter = jitter


class DegeneratePopulationError(ArithmeticError):
    pass
