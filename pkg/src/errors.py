class BlockBertError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(BlockBertError, ValueError):
    pass


class DegenerateRowError(BlockBertError, ValueError):
    """A softmax row (or mask row) has no admissible entry."""


class SingularDesignError(BlockBertError, ValueError):
    pass


class OracleError(BlockBertError, RuntimeError):
    """Finite-difference oracle hit a non-finite evaluation."""


class PermutationError(BlockBertError, ValueError):
    pass


class PaddingRequiredError(BlockBertError, ValueError):
    """n does not divide N; the caller has to pad first."""


class DivergenceError(BlockBertError, RuntimeError):
    def __init__(self, message: str, checkpoint: str | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(BlockBertError, RuntimeError):
    pass


class ProfilingError(BlockBertError, RuntimeError):
    pass


class SimulatedOOMError(BlockBertError, MemoryError):
    def __init__(self, requested: int, live: int, budget: int):
        super().__init__(
            f"allocation of {requested} bytes exceeds budget "
            f"({live} live, budget {budget})"
        )
        self.requested = requested
        self.live = live
        self.budget = budget


class MaskingError(BlockBertError, ValueError):
    pass


class ConfigError(BlockBertError, ValueError):
    pass


class PoorFitError(BlockBertError, RuntimeError):
    pass


class ArgumentError(BlockBertError, ValueError):
    pass
