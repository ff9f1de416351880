"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick an exit status:
1 for configuration problems, 2 for numerical failures, 3 for resource limits.
"""


class MemLQError(Exception):
    category = 2


class ConfigError(MemLQError):
    category = 1


class DimensionMismatch(ConfigError):
    pass


class NonFinite(MemLQError):
    category = 2


class BadHorizon(ConfigError):
    pass


class BadGrid(ConfigError):
    pass


class HistoryLengthMismatch(ConfigError):
    pass


class IndexOutOfRange(MemLQError):
    category = 2


class NoConvergence(MemLQError):
    category = 2


class MemoryBudgetExceeded(MemLQError):
    category = 3


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    pass
