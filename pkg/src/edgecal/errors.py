"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition of a public operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DataError(ValueError):
    """An input file could not be parsed."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss or otherwise failed."""
