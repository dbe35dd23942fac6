class ContractError(ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Array widths do not line up."""


class DivergenceError(ArithmeticError):
    """Training or a loss evaluation produced non-finite values."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""
