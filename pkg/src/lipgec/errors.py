"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3. Plain ValueError from contract violations is treated
as a data error at the CLI boundary.
"""


class UsageError(Exception):
    """Bad flags, bad config keys, or an invalid subcommand invocation."""


class DataError(Exception):
    """Missing or malformed artifacts: manifests, pools, checkpoints."""


class NumericError(Exception):
    """NaN losses, divergence, or a failed numeric self-check."""
