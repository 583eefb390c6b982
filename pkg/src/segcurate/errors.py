"""Exception types shared across the package."""


class SegcurateError(Exception):
    """Base class for all package errors."""


class LabelMapError(SegcurateError):
    """Malformed or invalid label-map data."""


class TaxonomyError(SegcurateError):
    """Invalid taxonomy, mapping file, or palette definition."""


class HarmonizeError(SegcurateError):
    """Source ids that cannot be remapped in strict mode."""


class ManifestError(SegcurateError):
    """Malformed manifest file or broken manifest invariant."""


class ConfigError(SegcurateError):
    """Invalid pipeline configuration; maps to CLI exit code 2."""


class WorkerError(SegcurateError):
    """Error reported by an external worker process."""


class WorkerCrashError(WorkerError):
    """Worker died mid-request; retryable."""


class WorkerTimeoutError(WorkerError):
    """Worker did not answer within the configured timeout; retryable."""


class ProtocolError(SegcurateError):
    """Wire-protocol violation; maps to CLI exit code 4."""
