"""Exception hierarchy. The CLI maps these onto exit codes."""


class DashError(Exception):
    pass


class ContractError(DashError, ValueError):
    """A precondition of an operation was violated by the caller."""


class InputError(DashError, ValueError):
    """User-supplied data (token ids, prompt files, weight files) is invalid."""


class ConfigError(DashError, ValueError):
    """A halting or model configuration cannot be executed."""


class CapacityError(DashError, OverflowError):
    """A fixed capacity (sequence length, integer range) would be exceeded."""
