"""Exception hierarchy shared across the package.

The split matters for the service/CLI layer: configuration problems map to
HTTP 400 / exit code 1, everything else to HTTP 500 / exit code 2.
"""


class MetaedError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MetaedError):
    """A spec/config object is invalid before any work starts."""


class IngestionError(MetaedError):
    """A dataset file is malformed; message names the offending line."""


class SamplingError(MetaedError):
    """An episode cannot be sampled from the given pools."""


class ContractError(MetaedError):
    """An operation was called with inputs violating its contract."""
