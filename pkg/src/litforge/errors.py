"""Exception hierarchy shared across the pipeline.

The CLI maps these onto distinct exit codes, so stages raise the most
specific class that applies instead of bare ValueError.
"""


class LitforgeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(LitforgeError):
    """Bad configuration: unknown keys, out-of-range values, schema violations."""


class DataError(LitforgeError):
    """Bad input data: parse failures, integrity violations, missing artifacts."""


class ShardFormatError(DataError):
    """Structurally invalid shard: bad checksum, orphan member, truncation."""


class DivergenceError(LitforgeError):
    """Training failed to converge; carries the step at which the predicate fired."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
