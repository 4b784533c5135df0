"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input violates an operation's domain (bad count, out-of-range index, ...)."""


class CsvParseError(ValueError):
    """A dataset file could not be parsed; message carries the offending row."""


class CacheBuildError(ValueError):
    """Control-variate precomputation hit a non-finite quantity; names the index."""


class ConfigError(ValueError):
    """Invalid experiment configuration. CLI maps this to exit code 2."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SamplerError(RuntimeError):
    """A chain could not start or produced unusable output. CLI exit code 3."""
