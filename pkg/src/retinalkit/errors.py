"""Exception hierarchy shared by all pipeline stages."""


class RetinalKitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(RetinalKitError, ValueError):
    """Raster shapes disagree (mask vs. field of view, zone vs. mask...)."""


class ConfigError(RetinalKitError, ValueError):
    """A caller-supplied configuration value is invalid."""


class DegenerateInputError(RetinalKitError, ValueError):
    """Input is well formed but carries nothing to measure."""


class CorpusIntegrityError(RetinalKitError):
    """Cross-file references in a corpus do not resolve."""
