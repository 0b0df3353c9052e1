"""Error taxonomy shared by the library and the CLI exit-code mapping."""


class UsageError(Exception):
    """Bad flags, malformed config, unknown keys. CLI exit code 1."""


class DataError(Exception):
    """Corrupt or incompatible files: bad magic, truncation, shape echo
    mismatch, unreadable dataset. CLI exit code 2."""


class NumericsError(Exception):
    """Non-finite loss or gradient during training. CLI exit code 3."""
